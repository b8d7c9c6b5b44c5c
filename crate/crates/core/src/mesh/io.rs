use std::io::{BufRead, Write};

use super::{EdgeMarker, MarkedEdge, Mesh, Region};
use crate::error::MeshError;

fn region_tag(r: Region) -> String {
    match r {
        Region::Iron => "IRON".into(),
        Region::Air => "AIR".into(),
        Region::GapRing => "GAP_RING".into(),
        Region::Coil(k) => format!("COIL_{k}"),
    }
}

fn parse_region(s: &str) -> Option<Region> {
    match s {
        "IRON" => Some(Region::Iron),
        "AIR" => Some(Region::Air),
        "GAP_RING" => Some(Region::GapRing),
        _ => s.strip_prefix("COIL_").and_then(|k| k.parse().ok()).map(Region::Coil),
    }
}

fn marker_tag(m: EdgeMarker) -> &'static str {
    match m {
        EdgeMarker::OuterDirichlet => "OUTER_DIRICHLET",
        EdgeMarker::RotorRim => "ROTOR_RIM",
        EdgeMarker::DesignInterface => "DESIGN_INTERFACE",
    }
}

fn parse_marker(s: &str) -> Option<EdgeMarker> {
    match s {
        "OUTER_DIRICHLET" => Some(EdgeMarker::OuterDirichlet),
        "ROTOR_RIM" => Some(EdgeMarker::RotorRim),
        "DESIGN_INTERFACE" => Some(EdgeMarker::DesignInterface),
        _ => None,
    }
}

/// Writes the plain-text `mesh-v1` format. Coordinates use the shortest
/// representation that round-trips exactly.
pub fn write_mesh<W: Write>(mesh: &Mesh, mut out: W) -> std::io::Result<()> {
    writeln!(out, "mesh-v1")?;
    writeln!(out, "{} {} {}", mesh.num_vertices(), mesh.num_triangles(), mesh.marked_edges().len())?;
    for v in mesh.vertices() {
        writeln!(out, "{} {}", v[0], v[1])?;
    }
    for (t, r) in mesh.triangles().iter().zip(mesh.regions()) {
        writeln!(out, "{} {} {} {}", t[0], t[1], t[2], region_tag(*r))?;
    }
    for e in mesh.marked_edges() {
        writeln!(out, "{} {} {}", e.a, e.b, marker_tag(e.marker))?;
    }
    Ok(())
}

pub fn read_mesh<R: BufRead>(input: R) -> Result<Mesh, MeshError> {
    let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let mut next = |what: &str| -> Result<(usize, String), MeshError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(MeshError::Parse { line: n, msg: e.to_string() }),
            None => Err(MeshError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let (n, header) = next("header")?;
    if header.trim() != "mesh-v1" {
        return Err(MeshError::Parse { line: n, msg: format!("expected `mesh-v1`, found `{}`", header.trim()) });
    }
    let (n, counts) = next("counts")?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| MeshError::Parse { line: n, msg: format!("bad counts: {e}") })?;
    let [nv, nt, ne] = counts[..] else {
        return Err(MeshError::Parse { line: n, msg: "expected `nv nt ne`".into() });
    };
    let bad = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = next("vertex")?;
        let xy: Vec<f64> = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(n, "bad vertex"))?;
        let [x, y] = xy[..] else { return Err(bad(n, "vertex needs two coordinates")) };
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(nt);
    let mut regions = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (n, l) = next("triangle")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(n, "triangle needs `i j k tag`"));
        }
        let idx: Vec<usize> = f[..3].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad(n, "bad index"))?;
        triangles.push([idx[0], idx[1], idx[2]]);
        regions.push(parse_region(f[3]).ok_or_else(|| bad(n, &format!("unknown region tag `{}`", f[3])))?);
    }
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (n, l) = next("edge")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad(n, "edge needs `i j marker`"));
        }
        let a = f[0].parse().map_err(|_| bad(n, "bad index"))?;
        let b = f[1].parse().map_err(|_| bad(n, "bad index"))?;
        let marker = parse_marker(f[2]).ok_or_else(|| bad(n, &format!("unknown marker `{}`", f[2])))?;
        edges.push(MarkedEdge { a, b, marker });
    }
    Mesh::new(vertices, triangles, regions, edges)
}

/// Extra fields for the VTK export.
#[derive(Default)]
pub struct VtkData<'a> {
    pub point_scalars: Vec<(&'a str, &'a [f64])>,
    pub cell_scalars: Vec<(&'a str, &'a [f64])>,
}

/// Legacy ASCII VTK unstructured grid with the region tag as cell data.
pub fn write_vtk<W: Write>(mesh: &Mesh, data: &VtkData<'_>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "shapetrace design")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.num_vertices())?;
    for v in mesh.vertices() {
        writeln!(out, "{} {} 0", v[0], v[1])?;
    }
    let nt = mesh.num_triangles();
    writeln!(out, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(out, "5")?;
    }
    writeln!(out, "CELL_DATA {nt}")?;
    writeln!(out, "SCALARS region int 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for r in mesh.regions() {
        let code = match r {
            Region::Air => 0,
            Region::Iron => 1,
            Region::GapRing => 2,
            Region::Coil(k) => 10 + *k as i64,
        };
        writeln!(out, "{code}")?;
    }
    for (name, values) in &data.cell_scalars {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in values.iter() {
            writeln!(out, "{v}")?;
        }
    }
    if !data.point_scalars.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, values) in &data.point_scalars {
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(out, "{v}")?;
            }
        }
    }
    Ok(())
}

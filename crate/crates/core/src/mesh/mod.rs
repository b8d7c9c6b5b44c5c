//! Triangulated machine cross-section with region tags, interface markers,
//! deformation and uniform refinement.

mod boundary;
mod geometry;
mod io;

pub use boundary::{DesignBoundary, DesignVertex};
pub use geometry::{build_reference_geometry, GeometryParams};
pub use io::{read_mesh, write_mesh, write_vtk, VtkData};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

pub type Point = [f64; 2];

/// Material/role tag of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Iron,
    Air,
    /// Coil sector `k`, carrying a piecewise constant current density.
    Coil(u16),
    /// Air-gap ring on which the torque is integrated.
    GapRing,
}

impl Region {
    pub fn is_air_like(self) -> bool {
        !matches!(self, Region::Iron)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeMarker {
    OuterDirichlet,
    RotorRim,
    DesignInterface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkedEdge {
    pub a: usize,
    pub b: usize,
    pub marker: EdgeMarker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQualityReport {
    /// Smallest interior angle over all triangles, in degrees.
    pub min_angle: f64,
    /// Smallest element area divided by the smallest area of the reference mesh.
    pub min_area_ratio: f64,
    pub inverted_count: usize,
}

/// Conforming triangle mesh of the computational domain.
///
/// Values are immutable; deformation and refinement return new meshes.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<Region>,
    edges: Vec<MarkedEdge>,
    in_rotor: Vec<bool>,
    movable: Vec<bool>,
    dirichlet: Vec<bool>,
    reference_min_area: f64,
}

/// Twice the signed area of the triangle `(a, b, c)`.
#[inline]
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Assembles a mesh from raw parts and derives rotor membership and
    /// vertex mobility. Every triangle must be counterclockwise.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        regions: Vec<Region>,
        edges: Vec<MarkedEdge>,
    ) -> Result<Self, MeshError> {
        if regions.len() != triangles.len() {
            return Err(MeshError::Malformed(format!(
                "{} region tags for {} triangles",
                regions.len(),
                triangles.len()
            )));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(MeshError::Malformed(format!("triangle {t} references a missing vertex")));
            }
            let a2 = signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a2 <= 0.0 {
                return Err(MeshError::Orientation(t, 0.5 * a2));
            }
        }
        for e in &edges {
            if e.a >= nv || e.b >= nv || e.a == e.b {
                return Err(MeshError::Malformed(format!("bad marked edge ({}, {})", e.a, e.b)));
            }
        }
        let reference_min_area = triangles
            .iter()
            .map(|t| 0.5 * signed_area2(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .fold(f64::INFINITY, f64::min);
        let mut mesh = Mesh {
            vertices,
            triangles,
            regions,
            edges,
            in_rotor: Vec::new(),
            movable: Vec::new(),
            dirichlet: Vec::new(),
            reference_min_area,
        };
        mesh.derive_flags()?;
        Ok(mesh)
    }

    fn derive_flags(&mut self) -> Result<(), MeshError> {
        let nv = self.vertices.len();
        let nt = self.triangles.len();
        let mut dirichlet = vec![false; nv];
        let mut on_rim = vec![false; nv];
        let mut rim_edges = std::collections::HashSet::new();
        for e in &self.edges {
            match e.marker {
                EdgeMarker::OuterDirichlet => {
                    dirichlet[e.a] = true;
                    dirichlet[e.b] = true;
                }
                EdgeMarker::RotorRim => {
                    on_rim[e.a] = true;
                    on_rim[e.b] = true;
                    rim_edges.insert(edge_key(e.a, e.b));
                }
                EdgeMarker::DesignInterface => {}
            }
        }

        // Rotor = connected component (across non-rim edges) of the triangle
        // closest to the origin. Without a rim the whole mesh is the rotor.
        let in_rotor = if rim_edges.is_empty() {
            vec![true; nt]
        } else {
            let adjacency = self.triangle_adjacency();
            let seed = (0..nt)
                .min_by(|&a, &b| {
                    let ca = self.centroid(a);
                    let cb = self.centroid(b);
                    (ca[0].hypot(ca[1])).total_cmp(&cb[0].hypot(cb[1]))
                })
                .ok_or_else(|| MeshError::Malformed("mesh has no triangles".into()))?;
            let mut inside = vec![false; nt];
            let mut stack = vec![seed];
            inside[seed] = true;
            while let Some(t) = stack.pop() {
                for (k, nb) in adjacency[t].iter().enumerate() {
                    let Some(nb) = *nb else { continue };
                    let tri = self.triangles[t];
                    let key = edge_key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                    if !inside[nb] && !rim_edges.contains(&key) {
                        inside[nb] = true;
                        stack.push(nb);
                    }
                }
            }
            inside
        };

        let mut touches_outside = vec![false; nv];
        let mut used = vec![false; nv];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                used[v] = true;
                if !in_rotor[t] {
                    touches_outside[v] = true;
                }
            }
        }
        let movable = (0..nv)
            .map(|v| used[v] && !touches_outside[v] && !on_rim[v] && !dirichlet[v])
            .collect();
        self.in_rotor = in_rotor;
        self.movable = movable;
        self.dirichlet = dirichlet;
        Ok(())
    }

    /// Neighbor across the edge opposite local vertex `k` of each triangle.
    pub fn triangle_adjacency(&self) -> Vec<[Option<usize>; 3]> {
        let mut owner: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(self.triangles.len() * 2);
        let mut adj = vec![[None; 3]; self.triangles.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                if let Some((t2, k2)) = owner.remove(&key) {
                    adj[t][k] = Some(t2);
                    adj[t2][k2] = Some(t);
                } else {
                    owner.insert(key, (t, k));
                }
            }
        }
        adj
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn marked_edges(&self) -> &[MarkedEdge] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Whether triangle `t` lies inside the rotor rim.
    pub fn in_rotor(&self, t: usize) -> bool {
        self.in_rotor[t]
    }

    /// Vertices that deformations may move: strictly inside the rotor, off
    /// the rim and off the outer boundary.
    pub fn movable(&self) -> &[bool] {
        &self.movable
    }

    pub fn is_dirichlet(&self, v: usize) -> bool {
        self.dirichlet[v]
    }

    pub fn dirichlet(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn reference_min_area(&self) -> f64 {
        self.reference_min_area
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * signed_area2(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Total area of the triangles carrying `region`.
    pub fn region_area(&self, region: Region) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.regions[t] == region)
            .map(|t| self.area(t))
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Same topology and tags, new vertex positions.
    fn with_vertices(&self, vertices: Vec<Point>) -> Mesh {
        Mesh {
            vertices,
            ..self.clone()
        }
    }

    pub fn quality(&self) -> MeshQualityReport {
        let guard = 1e-14 * self.reference_min_area;
        let mut min_angle = f64::INFINITY;
        let mut min_area = f64::INFINITY;
        let mut inverted = 0;
        for t in 0..self.triangles.len() {
            let p = self.corners(t);
            let area = 0.5 * signed_area2(p[0], p[1], p[2]);
            if area <= guard {
                inverted += 1;
            }
            min_area = min_area.min(area);
            for k in 0..3 {
                let o = p[k];
                let u = [p[(k + 1) % 3][0] - o[0], p[(k + 1) % 3][1] - o[1]];
                let w = [p[(k + 2) % 3][0] - o[0], p[(k + 2) % 3][1] - o[1]];
                let cross = u[0] * w[1] - u[1] * w[0];
                let dot = u[0] * w[0] + u[1] * w[1];
                min_angle = min_angle.min(cross.abs().atan2(dot).to_degrees());
            }
        }
        MeshQualityReport {
            min_angle,
            min_area_ratio: min_area / self.reference_min_area,
            inverted_count: inverted,
        }
    }

    /// Moves every vertex by `step * displacement`. Rejects displacements
    /// that touch immovable vertices and results with inverted triangles.
    pub fn apply_deformation(&self, displacement: &[Point], step: f64) -> Result<Mesh, MeshError> {
        if displacement.len() != self.vertices.len() {
            return Err(MeshError::Malformed(format!(
                "displacement has {} entries for {} vertices",
                displacement.len(),
                self.vertices.len()
            )));
        }
        if !(step >= 0.0) {
            return Err(MeshError::NegativeStep(step));
        }
        for (v, d) in displacement.iter().enumerate() {
            if !self.movable[v] && (d[0] != 0.0 || d[1] != 0.0) {
                return Err(MeshError::ImmovableDisplaced(v));
            }
        }
        let vertices = self
            .vertices
            .iter()
            .zip(displacement)
            .map(|(x, d)| [x[0] + step * d[0], x[1] + step * d[1]])
            .collect();
        let moved = self.with_vertices(vertices);
        let guard = 1e-14 * self.reference_min_area;
        let count = (0..moved.triangles.len()).filter(|&t| moved.area(t) <= guard).count();
        if count > 0 {
            return Err(MeshError::Inverted { count });
        }
        Ok(moved)
    }

    /// Splits every triangle into four through its edge midpoints. Marked
    /// edges are split too; tags are inherited.
    pub fn uniform_refine(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut regions = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            regions.extend_from_slice(&[self.regions[t]; 4]);
        }
        let mut edges = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            let m = mid(e.a, e.b, &mut vertices);
            edges.push(MarkedEdge { a: e.a, b: m, marker: e.marker });
            edges.push(MarkedEdge { a: m, b: e.b, marker: e.marker });
        }
        Mesh::new(vertices, triangles, regions, edges).expect("refinement of a valid mesh is valid")
    }

    /// Ordered design-interface vertices with normals pointing from iron into air.
    pub fn extract_design_boundary(&self) -> Result<DesignBoundary, MeshError> {
        boundary::extract(self)
    }

    /// Indices of triangles that share at least one vertex with a movable vertex.
    pub fn triangles_touching(&self, mask: &[bool]) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&t| self.triangles[t].iter().any(|&v| mask[v]))
            .collect()
    }
}

use std::collections::HashMap;

use super::{edge_key, EdgeMarker, Mesh, Point, Region};
use crate::error::MeshError;

/// A vertex of the iron/air design interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignVertex {
    pub vertex: usize,
    /// Unit normal pointing from iron into air.
    pub normal: Point,
    /// Unit tangent, the normal rotated by +90 degrees.
    pub tangent: Point,
    /// Half the length of the adjacent interface edges.
    pub lumped_length: f64,
    pub movable: bool,
}

/// The design interface as ordered polylines.
#[derive(Debug, Clone)]
pub struct DesignBoundary {
    pub vertices: Vec<DesignVertex>,
    /// `(start, end)` ranges into `vertices`, one per connected polyline.
    pub chains: Vec<(usize, usize)>,
}

impl DesignBoundary {
    /// The movable design vertices; these carry the reduced unknowns.
    pub fn movable(&self) -> impl Iterator<Item = &DesignVertex> {
        self.vertices.iter().filter(|v| v.movable)
    }

    pub fn num_movable(&self) -> usize {
        self.movable().count()
    }

    pub fn perimeter(&self) -> f64 {
        self.vertices.iter().map(|v| v.lumped_length).sum()
    }
}

pub(super) fn extract(mesh: &Mesh) -> Result<DesignBoundary, MeshError> {
    let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            owners.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default().push(t);
        }
    }

    // Orient every interface edge counterclockwise around its iron triangle.
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut prev: HashMap<usize, usize> = HashMap::new();
    for e in mesh.edges.iter().filter(|e| e.marker == EdgeMarker::DesignInterface) {
        let tris = owners.get(&edge_key(e.a, e.b)).map(Vec::as_slice).unwrap_or(&[]);
        let iron: Vec<usize> = tris.iter().copied().filter(|&t| mesh.regions[t] == Region::Iron).collect();
        let air = tris.iter().filter(|&&t| mesh.regions[t] == Region::Air).count();
        if iron.len() != 1 || air != 1 {
            return Err(MeshError::Malformed(format!(
                "design interface edge ({}, {}) does not separate one iron and one air triangle",
                e.a, e.b
            )));
        }
        let tri = mesh.triangles[iron[0]];
        let k = tri.iter().position(|&v| v == e.a).expect("edge vertex in owner");
        let (from, to) = if tri[(k + 1) % 3] == e.b { (e.a, e.b) } else { (e.b, e.a) };
        if next.insert(from, to).is_some() || prev.insert(to, from).is_some() {
            return Err(MeshError::Malformed(format!("design interface branches at vertex {from} or {to}")));
        }
    }
    if next.is_empty() {
        return Err(MeshError::EmptyInterface);
    }

    let mut starts: Vec<usize> = next.keys().copied().filter(|v| !prev.contains_key(v)).collect();
    starts.sort_unstable();
    let mut visited: HashMap<usize, bool> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    for &s in &starts {
        let mut chain = vec![s];
        visited.insert(s, true);
        let mut v = s;
        while let Some(&n) = next.get(&v) {
            chain.push(n);
            visited.insert(n, true);
            v = n;
        }
        order.push(chain);
    }
    let mut rest: Vec<usize> = next.keys().copied().filter(|v| !visited.contains_key(v)).collect();
    rest.sort_unstable();
    for s in rest {
        if visited.contains_key(&s) {
            continue;
        }
        let mut chain = vec![s];
        visited.insert(s, true);
        let mut v = next[&s];
        while v != s {
            chain.push(v);
            visited.insert(v, true);
            v = next[&v];
        }
        order.push(chain);
    }

    let x = &mesh.vertices;
    let edge_normal = |a: usize, b: usize| -> (Point, f64) {
        let d = [x[b][0] - x[a][0], x[b][1] - x[a][1]];
        let len = d[0].hypot(d[1]);
        ([d[1] / len, -d[0] / len], len)
    };

    let mut vertices = Vec::new();
    let mut chains = Vec::new();
    for chain in order {
        let start = vertices.len();
        for &v in &chain {
            // In 2D every vertex sees its two edges under the same angle, so
            // angle weighting reduces to the plain sum of unit edge normals.
            let mut n = [0.0, 0.0];
            let mut lumped = 0.0;
            for (a, b) in [prev.get(&v).map(|&p| (p, v)), next.get(&v).map(|&q| (v, q))].into_iter().flatten() {
                let (en, len) = edge_normal(a, b);
                n[0] += en[0];
                n[1] += en[1];
                lumped += 0.5 * len;
            }
            let norm = n[0].hypot(n[1]);
            let normal = [n[0] / norm, n[1] / norm];
            vertices.push(DesignVertex {
                vertex: v,
                normal,
                tangent: [-normal[1], normal[0]],
                lumped_length: lumped,
                movable: mesh.movable[v],
            });
        }
        chains.push((start, vertices.len()));
    }
    Ok(DesignBoundary { vertices, chains })
}

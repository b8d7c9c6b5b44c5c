//! Deformation machinery on the rotor: normal-amplitude parametrization of
//! the design interface, interior mesh extension, reduced gradients and the
//! boundary metric used for gradient descent.

use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{FemError, MeshError};
use crate::fem::ElementGeometry;
use crate::linalg::{is_positive_definite, max_abs, Cholesky, SymmetricPattern, FIXED};
use crate::mesh::{Mesh, Point};

/// Bilinear form used both for the interior extension and as descent metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtensionKind {
    /// Componentwise Laplace operator.
    Harmonic,
    /// Linear elasticity `2 mu eps(u):eps(v) + lambda div u div v`.
    Elastic { lambda: f64, mu: f64 },
}

impl Default for ExtensionKind {
    fn default() -> Self {
        ExtensionKind::Elastic { lambda: 0.0, mu: 1.0 }
    }
}

/// Normal amplitudes on the movable design vertices; the displacement of
/// vertex `k` is `alpha[k] * n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDeformation {
    pub alpha: Vec<f64>,
}

/// Symmetrized, possibly shifted Hessian over normal amplitudes.
#[derive(Debug, Clone)]
pub struct ShapeHessian {
    pub matrix: Mat<f64>,
    /// Levenberg shift added to the diagonal.
    pub shift: f64,
}

/// Symmetrizes `raw` and adds the smallest shift `mu`, doubling from
/// `1e-8 max|H|`, that makes `H + mu I` have all eigenvalues at least
/// `1e-10 max|H|`.
pub fn regularize(raw: &Mat<f64>) -> ShapeHessian {
    let n = raw.nrows();
    let mut h = Mat::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
    let scale = max_abs(&h);
    if n == 0 || scale == 0.0 {
        return ShapeHessian { matrix: h, shift: 0.0 };
    }
    let eps = 1e-10 * scale;
    let pd_with = |h: &Mat<f64>, mu: f64| {
        let shifted = Mat::from_fn(n, n, |i, j| h[(i, j)] + if i == j { mu - eps } else { 0.0 });
        is_positive_definite(&shifted)
    };
    let mut shift = 0.0;
    if !pd_with(&h, 0.0) {
        shift = 1e-8 * scale;
        while !pd_with(&h, shift) {
            shift *= 2.0;
        }
        for i in 0..n {
            h[(i, i)] += shift;
        }
    }
    ShapeHessian { matrix: h, shift }
}

/// Topology-level data of the deformation space: which vertices carry
/// normal amplitudes, which are extended, and the matrix pattern.
#[derive(Debug, Clone)]
pub struct DesignSpace {
    kind: ExtensionKind,
    /// Movable design-interface vertices, in boundary order.
    design: Vec<usize>,
    /// Position of a vertex in `design`.
    design_pos: Vec<usize>,
    /// Movable vertices off the interface.
    interior: Vec<usize>,
    /// Triangles touching a movable vertex.
    elements: Vec<usize>,
    element_vertices: Vec<[usize; 3]>,
    pattern: Arc<SymmetricPattern>,
}

impl DesignSpace {
    /// `pinned` interface vertices next to each immovable interface vertex
    /// are held fixed as well, which keeps slivers from forming where the
    /// interface meets the rotor rim.
    pub fn new(mesh: &Mesh, kind: ExtensionKind, pinned: usize) -> Result<Self, MeshError> {
        let boundary = mesh.extract_design_boundary()?;
        let nv = mesh.num_vertices();
        let mut held = vec![false; nv];
        for &(start, end) in &boundary.chains {
            let chain = &boundary.vertices[start..end];
            for (i, dv) in chain.iter().enumerate() {
                if dv.movable {
                    continue;
                }
                for d in 1..=pinned {
                    if i >= d {
                        held[chain[i - d].vertex] = true;
                    }
                    if i + d < chain.len() {
                        held[chain[i + d].vertex] = true;
                    }
                }
            }
        }
        let mut design_pos = vec![FIXED; nv];
        let mut design = Vec::new();
        for dv in boundary.movable().filter(|dv| !held[dv.vertex]) {
            design_pos[dv.vertex] = design.len();
            design.push(dv.vertex);
        }
        if design.is_empty() {
            return Err(MeshError::EmptyInterface);
        }
        let mut interior_pos = vec![FIXED; nv];
        let mut interior = Vec::new();
        for v in 0..nv {
            if mesh.movable()[v] && design_pos[v] == FIXED && !held[v] {
                interior_pos[v] = interior.len();
                interior.push(v);
            }
        }
        let elements = mesh.triangles_touching(mesh.movable());
        let dofs = elements
            .iter()
            .flat_map(|&t| mesh.triangles()[t])
            .flat_map(|v| {
                let i = interior_pos[v];
                if i == FIXED {
                    [FIXED, FIXED]
                } else {
                    [2 * i, 2 * i + 1]
                }
            })
            .collect();
        let pattern = Arc::new(SymmetricPattern::new(2 * interior.len(), 6, dofs).map_err(|e| MeshError::Malformed(e.to_string()))?);
        let element_vertices = elements.iter().map(|&t| mesh.triangles()[t]).collect();
        Ok(Self { kind, design, design_pos, interior, elements, element_vertices, pattern })
    }

    /// Number of normal amplitudes.
    pub fn dim(&self) -> usize {
        self.design.len()
    }

    pub fn design_vertices(&self) -> &[usize] {
        &self.design
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn kind(&self) -> ExtensionKind {
        self.kind
    }

    /// Builds the frame at the current vertex positions of `mesh`.
    pub fn frame(self: &Arc<Self>, mesh: &Mesh) -> Result<ShapeFrame, FemError> {
        ShapeFrame::new(self, mesh)
    }
}

/// Geometry-dependent part: normals and the factored extension operator at
/// one design. Frozen within a corrector iteration.
#[derive(Debug, Clone)]
pub struct ShapeFrame {
    pub normals: Vec<Point>,
    pub tangents: Vec<Point>,
    /// Half the adjacent interface edge lengths per design vertex.
    pub lumped: Vec<f64>,
    element_matrices: Vec<[f64; 36]>,
    factor: Cholesky,
    space: Arc<DesignSpace>,
}

fn element_matrix(kind: ExtensionKind, p: [Point; 3]) -> [f64; 36] {
    let e = ElementGeometry::new(p);
    let area = e.area();
    let g = e.grads;
    let mut ke = [0.0; 36];
    for a in 0..3 {
        for b in 0..3 {
            let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
            for i in 0..2 {
                for j in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let v = match kind {
                        ExtensionKind::Harmonic => delta * gg,
                        ExtensionKind::Elastic { lambda, mu } => mu * (delta * gg + g[a][j] * g[b][i]) + lambda * g[a][i] * g[b][j],
                    };
                    ke[(2 * a + i) * 6 + 2 * b + j] = area * v;
                }
            }
        }
    }
    ke
}

impl ShapeFrame {
    fn new(space: &Arc<DesignSpace>, mesh: &Mesh) -> Result<Self, FemError> {
        let boundary = mesh.extract_design_boundary().map_err(|e| FemError::Unsupported(e.to_string()))?;
        let m = space.design.len();
        let mut normals = vec![[0.0; 2]; m];
        let mut tangents = vec![[0.0; 2]; m];
        let mut lumped = vec![0.0; m];
        for dv in boundary.movable().filter(|dv| space.design_pos[dv.vertex] != FIXED) {
            let k = space.design_pos[dv.vertex];
            normals[k] = dv.normal;
            tangents[k] = dv.tangent;
            lumped[k] = dv.lumped_length;
        }
        let element_matrices: Vec<[f64; 36]> = space.elements.iter().map(|&t| element_matrix(space.kind, mesh.corners(t))).collect();
        let mut k = space.pattern.zeros();
        for (e, ke) in element_matrices.iter().enumerate() {
            k.scatter(e, ke);
        }
        let factor = k.factor()?;
        Ok(Self { normals, tangents, lumped, element_matrices, factor, space: Arc::clone(space) })
    }

    pub fn dim(&self) -> usize {
        self.normals.len()
    }

    /// Boundary displacement `alpha_k n_k` per design vertex.
    pub fn boundary_displacement(&self, alpha: &[f64]) -> Vec<Point> {
        alpha.iter().zip(&self.normals).map(|(a, n)| [a * n[0], a * n[1]]).collect()
    }

    /// Full-mesh displacement: `alpha_k n_k` on the interface, the extension
    /// inside the rotor, zero elsewhere.
    pub fn extend(&self, alpha: &[f64], num_vertices: usize) -> Vec<Point> {
        assert_eq!(alpha.len(), self.dim());
        let s = &self.space;
        let d_b = self.boundary_displacement(alpha);
        let mut rhs = vec![0.0; 2 * s.interior.len()];
        for (e, ke) in self.element_matrices.iter().enumerate() {
            let dofs = s.pattern.element_dofs(e);
            let tri = self.element_vertices(e);
            for b in 0..3 {
                let k = s.design_pos[tri[b]];
                if k == FIXED {
                    continue;
                }
                for a in 0..3 {
                    for i in 0..2 {
                        let row = dofs[2 * a + i];
                        if row != FIXED {
                            rhs[row] -= ke[(2 * a + i) * 6 + 2 * b] * d_b[k][0] + ke[(2 * a + i) * 6 + 2 * b + 1] * d_b[k][1];
                        }
                    }
                }
            }
        }
        self.factor.solve_in_place(&mut rhs);
        let mut out = vec![[0.0; 2]; num_vertices];
        for (k, &v) in s.design.iter().enumerate() {
            out[v] = d_b[k];
        }
        for (i, &v) in s.interior.iter().enumerate() {
            out[v] = [rhs[2 * i], rhs[2 * i + 1]];
        }
        out
    }

    fn element_vertices(&self, e: usize) -> [usize; 3] {
        self.space.element_vertices[e]
    }

    /// Chain rule of a per-vertex gradient through the extension:
    /// the derivative of `J(X + E(alpha n))` with respect to `alpha` at zero.
    pub fn reduce(&self, g: &[Point]) -> Vec<f64> {
        let s = &self.space;
        let mut y: Vec<f64> = s.interior.iter().flat_map(|&v| g[v]).collect();
        self.factor.solve_in_place(&mut y);
        let mut z: Vec<Point> = s.design.iter().map(|&v| g[v]).collect();
        for (e, ke) in self.element_matrices.iter().enumerate() {
            let dofs = s.pattern.element_dofs(e);
            let tri = self.element_vertices(e);
            for a in 0..3 {
                let k = s.design_pos[tri[a]];
                if k == FIXED {
                    continue;
                }
                for b in 0..3 {
                    for j in 0..2 {
                        let col = dofs[2 * b + j];
                        if col != FIXED {
                            z[k][0] -= ke[(2 * a) * 6 + 2 * b + j] * y[col];
                            z[k][1] -= ke[(2 * a + 1) * 6 + 2 * b + j] * y[col];
                        }
                    }
                }
            }
        }
        z.iter().zip(&self.normals).map(|(z, n)| z[0] * n[0] + z[1] * n[1]).collect()
    }

    /// `b(E(alpha n), E(beta n))` as a dense matrix over normal amplitudes.
    pub fn metric(&self, num_vertices: usize) -> Mat<f64> {
        let m = self.dim();
        let mut out = Mat::zeros(m, m);
        let mut unit = vec![0.0; m];
        for j in 0..m {
            unit[j] = 1.0;
            let w = self.extend(&unit, num_vertices);
            unit[j] = 0.0;
            let kw = self.apply_stiffness(&w);
            for (i, &v) in self.space.design.iter().enumerate() {
                out[(i, j)] = kw[v][0] * self.normals[i][0] + kw[v][1] * self.normals[i][1];
            }
        }
        for i in 0..m {
            for j in 0..i {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// `K w` per vertex over the rotor elements.
    fn apply_stiffness(&self, w: &[Point]) -> Vec<Point> {
        let mut out = vec![[0.0; 2]; w.len()];
        for (e, ke) in self.element_matrices.iter().enumerate() {
            let tri = self.element_vertices(e);
            for a in 0..3 {
                for i in 0..2 {
                    let mut acc = 0.0;
                    for b in 0..3 {
                        acc += ke[(2 * a + i) * 6 + 2 * b] * w[tri[b]][0] + ke[(2 * a + i) * 6 + 2 * b + 1] * w[tri[b]][1];
                    }
                    out[tri[a]][i] += acc;
                }
            }
        }
        out
    }

    /// Solves `b(V, W) = -dJ(W)` over the extended normal deformations:
    /// returns the amplitudes `alpha = -S^{-1} G` of the descent field.
    pub fn descent_direction(&self, reduced_gradient: &[f64], num_vertices: usize) -> Result<BoundaryDeformation, FemError> {
        if reduced_gradient.iter().all(|&g| g == 0.0) {
            return Ok(BoundaryDeformation { alpha: vec![0.0; self.dim()] });
        }
        let s = self.metric(num_vertices);
        let rhs: Vec<f64> = reduced_gradient.iter().map(|g| -g).collect();
        let alpha = crate::linalg::spd_solve(&s, &rhs).ok_or(FemError::Singular)?;
        Ok(BoundaryDeformation { alpha })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ProblemError;
    use crate::homotopy::{fd_hessians, Linearization, PathProblem};
    use crate::linalg::{dot, mat_vec};
    use crate::mesh::{build_reference_geometry, EdgeMarker, GeometryParams, MarkedEdge, Region};
    use crate::objectives::volume_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Polar mesh: iron disk of radius 1 inside an air annulus whose outer
    /// circle of radius 2 is the rotor rim.
    fn ring_disk(n: usize) -> Mesh {
        let radii = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
        let mut vertices = vec![[0.0, 0.0]];
        for r in radii {
            for k in 0..n {
                let a = 2.0 * PI * k as f64 / n as f64;
                vertices.push([r * a.cos(), r * a.sin()]);
            }
        }
        let id = |ring: usize, k: usize| 1 + ring * n + k % n;
        let mut triangles = Vec::new();
        let mut regions = Vec::new();
        for k in 0..n {
            triangles.push([0, id(0, k), id(0, k + 1)]);
            regions.push(Region::Iron);
        }
        for ring in 0..radii.len() - 1 {
            let region = if radii[ring] < 1.0 { Region::Iron } else { Region::Air };
            for k in 0..n {
                triangles.push([id(ring, k), id(ring + 1, k + 1), id(ring, k + 1)]);
                triangles.push([id(ring, k), id(ring + 1, k), id(ring + 1, k + 1)]);
                regions.extend([region, region]);
            }
        }
        let mut edges = Vec::new();
        for k in 0..n {
            edges.push(MarkedEdge { a: id(3, k), b: id(3, k + 1), marker: EdgeMarker::DesignInterface });
            edges.push(MarkedEdge { a: id(7, k), b: id(7, k + 1), marker: EdgeMarker::RotorRim });
        }
        Mesh::new(vertices, triangles, regions, edges).unwrap()
    }

    fn random_alpha(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    }

    fn norm(p: Point) -> f64 {
        p[0].hypot(p[1])
    }

    #[test]
    fn zero_data_extends_to_zero() {
        let mesh = ring_disk(24);
        let space = Arc::new(DesignSpace::new(&mesh, ExtensionKind::default(), 0).unwrap());
        let frame = space.frame(&mesh).unwrap();
        assert_eq!(frame.dim(), 24);
        let v = frame.extend(&vec![0.0; frame.dim()], mesh.num_vertices());
        assert!(v.iter().all(|p| *p == [0.0, 0.0]));
        let d = frame.descent_direction(&vec![0.0; frame.dim()], mesh.num_vertices()).unwrap();
        assert!(d.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn interface_data_is_exact_and_normal() {
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [ExtensionKind::default(), ExtensionKind::Harmonic] {
            let space = Arc::new(DesignSpace::new(&mesh, kind, 3).unwrap());
            let frame = space.frame(&mesh).unwrap();
            let alpha = random_alpha(&mut rng, frame.dim(), 1e-4);
            let v = frame.extend(&alpha, mesh.num_vertices());
            for (k, &vert) in space.design_vertices().iter().enumerate() {
                let n = frame.normals[k];
                assert_eq!(v[vert], [alpha[k] * n[0], alpha[k] * n[1]]);
                let tangential = v[vert][0] * frame.tangents[k][0] + v[vert][1] * frame.tangents[k][1];
                assert!(tangential.abs() <= 1e-15 * alpha[k].abs());
            }
            for (i, p) in v.iter().enumerate() {
                if !mesh.movable()[i] {
                    assert_eq!(*p, [0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn harmonic_extension_obeys_maximum_principle() {
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let space = Arc::new(DesignSpace::new(&mesh, ExtensionKind::Harmonic, 3).unwrap());
        let frame = space.frame(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let alpha = random_alpha(&mut rng, frame.dim(), 1e-4);
            let v = frame.extend(&alpha, mesh.num_vertices());
            let boundary = space.design_vertices().iter().map(|&i| norm(v[i])).fold(0.0, f64::max);
            let interior = space.interior_vertices().iter().map(|&i| norm(v[i])).fold(0.0, f64::max);
            assert!(interior > 0.0);
            assert!(interior <= boundary * (1.0 + 1e-12), "{interior} > {boundary}");
        }
    }

    #[test]
    fn volume_descent_on_disk_points_inward() {
        let mesh = ring_disk(32);
        let space = Arc::new(DesignSpace::new(&mesh, ExtensionKind::default(), 0).unwrap());
        let frame = space.frame(&mesh).unwrap();
        let g = frame.reduce(&volume_gradient(&mesh, 1.0).per_vertex);
        // Half the distance between the two neighbours of a vertex.
        let chord = (2.0 * PI / 32.0).sin();
        assert!(g.iter().all(|&gk| (gk - chord).abs() < 1e-12));
        let d = frame.descent_direction(&g, mesh.num_vertices()).unwrap();
        assert!(d.alpha.iter().all(|&a| a < 0.0));
        let s = frame.metric(mesh.num_vertices());
        let b = dot(&d.alpha, &mat_vec(&s, &d.alpha));
        let slope = dot(&g, &d.alpha);
        assert!(slope < 0.0);
        assert!((slope + b).abs() <= 1e-12 * b);
    }

    #[test]
    fn metric_is_symmetric_positive_definite() {
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let space = Arc::new(DesignSpace::new(&mesh, ExtensionKind::default(), 3).unwrap());
        let frame = space.frame(&mesh).unwrap();
        let s = frame.metric(mesh.num_vertices());
        for i in 0..s.nrows() {
            for j in 0..i {
                assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
        assert!(is_positive_definite(&s));
    }

    #[test]
    fn pinning_holds_rim_neighbours() {
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let free = DesignSpace::new(&mesh, ExtensionKind::default(), 0).unwrap();
        let pinned = DesignSpace::new(&mesh, ExtensionKind::default(), 3).unwrap();
        let boundary = mesh.extract_design_boundary().unwrap();
        let junctions = boundary.vertices.iter().filter(|v| !v.movable).count();
        assert!(junctions > 0);
        assert_eq!(free.dim(), boundary.num_movable());
        assert_eq!(pinned.dim(), free.dim() - 3 * junctions);
    }

    #[test]
    fn regularize_symmetrizes_and_shifts_indefinite_matrices() {
        let raw = Mat::from_fn(3, 3, |i, j| [[2.0, 1.0, 0.0], [0.0, 3.0, 0.5], [0.0, 0.5, 1.0]][i][j]);
        let h = regularize(&raw);
        assert_eq!(h.shift, 0.0);
        assert_eq!(h.matrix[(0, 1)], 0.5);
        assert_eq!(h.matrix[(1, 0)], 0.5);
        let raw = Mat::from_fn(2, 2, |i, j| [[1.0, 0.0], [0.0, -2.0]][i][j]);
        let h = regularize(&raw);
        assert!(h.shift > 2.0 && h.shift <= 4.0 + 1e-7);
        assert!(is_positive_definite(&h.matrix));
    }

    /// Iron area alone, traced through the same frame machinery as the motor.
    struct AreaProblem {
        space: Arc<DesignSpace>,
    }

    impl PathProblem for AreaProblem {
        type Design = Mesh;
        type Frame = ShapeFrame;

        fn frame(&self, mesh: &Mesh) -> Result<ShapeFrame, ProblemError> {
            Ok(self.space.frame(mesh)?)
        }

        fn linearize(&self, mesh: &Mesh, frame: &ShapeFrame) -> Result<Linearization, ProblemError> {
            let g = frame.reduce(&volume_gradient(mesh, 1.0).per_vertex);
            let a = mesh.region_area(Region::Iron);
            Ok(Linearization { values: [a, a], gradients: [g.clone(), g] })
        }

        fn values(&self, mesh: &Mesh) -> Result<[f64; 2], ProblemError> {
            let a = mesh.region_area(Region::Iron);
            Ok([a, a])
        }

        fn displace(&self, mesh: &Mesh, frame: &ShapeFrame, alpha: &[f64]) -> Result<Mesh, ProblemError> {
            Ok(mesh.apply_deformation(&frame.extend(alpha, mesh.num_vertices()), 1.0)?)
        }

        fn fd_steps(&self, frame: &ShapeFrame, _: usize) -> Vec<f64> {
            frame.lumped.iter().map(|l| 1e-6 * l).collect()
        }
    }

    fn perp(v: Point) -> Point {
        [v[1], -v[0]]
    }

    fn project_out(n: Point, v: Point) -> Point {
        let d = n[0] * v[0] + n[1] * v[1];
        [v[0] - d * n[0], v[1] - d * n[1]]
    }

    /// Closed-form Hessian of the polygon area in normal amplitudes, with the
    /// vertex normal taken as the normalized sum of unit edge normals and
    /// the gradient re-expressed in the normals of the moved polygon.
    fn polygon_area_hessian(mesh: &Mesh, space: &DesignSpace, normals: &[Point]) -> Mat<f64> {
        let boundary = mesh.extract_design_boundary().unwrap();
        let x = mesh.vertices();
        let pos = |v: usize| space.design_vertices().iter().position(|&d| d == v);
        let m = space.dim();
        let mut h = Mat::zeros(m, m);
        for &(start, end) in &boundary.chains {
            let chain: Vec<usize> = boundary.vertices[start..end].iter().map(|d| d.vertex).collect();
            let len = chain.len();
            let closed = mesh.marked_edges().iter().any(|e| {
                e.marker == EdgeMarker::DesignInterface && (e.a, e.b) == (chain[len - 1], chain[0]) || (e.b, e.a) == (chain[len - 1], chain[0])
            });
            for i in 0..len {
                let Some(k) = pos(chain[i]) else { continue };
                let (p, q) = if closed {
                    (chain[(i + len - 1) % len], chain[(i + 1) % len])
                } else {
                    (chain[i - 1], chain[i + 1])
                };
                let v = chain[i];
                let edge = |a: usize, b: usize| {
                    let d = [x[b][0] - x[a][0], x[b][1] - x[a][1]];
                    let l = norm(d);
                    ([d[1] / l, -d[0] / l], l)
                };
                let (nu1, l1) = edge(p, v);
                let (nu2, l2) = edge(v, q);
                let s = [nu1[0] + nu2[0], nu1[1] + nu2[1]];
                let n = [s[0] / norm(s), s[1] / norm(s)];
                let big_g = {
                    let c = perp([x[q][0] - x[p][0], x[q][1] - x[p][1]]);
                    [0.5 * c[0], 0.5 * c[1]]
                };
                let sigma = if big_g[0] * n[0] + big_g[1] * n[1] > 0.0 { 1.0 } else { -1.0 };
                for (w, dir_vertex) in [(p, p), (v, v), (q, q)] {
                    let Some(j) = pos(w) else { continue };
                    let dx = normals[j];
                    let ddx = |a: usize, b: usize| -> Point {
                        let da = if a == dir_vertex { dx } else { [0.0, 0.0] };
                        let db = if b == dir_vertex { dx } else { [0.0, 0.0] };
                        [db[0] - da[0], db[1] - da[1]]
                    };
                    let dnu1 = project_out(nu1, perp(ddx(p, v)));
                    let dnu2 = project_out(nu2, perp(ddx(v, q)));
                    let ds = [dnu1[0] / l1 + dnu2[0] / l2, dnu1[1] / l1 + dnu2[1] / l2];
                    let dn = project_out(n, ds);
                    let dn = [dn[0] / norm(s), dn[1] / norm(s)];
                    let dc = perp(ddx(p, q));
                    let dg = [0.5 * sigma * dc[0], 0.5 * sigma * dc[1]];
                    h[(k, j)] += sigma * (dn[0] * big_g[0] + dn[1] * big_g[1]) + n[0] * dg[0] + n[1] * dg[1];
                }
            }
        }
        h
    }

    fn check_area_hessian(mesh: &Mesh, pinned: usize) -> Mat<f64> {
        let space = Arc::new(DesignSpace::new(mesh, ExtensionKind::default(), pinned).unwrap());
        let problem = AreaProblem { space: Arc::clone(&space) };
        let frame = problem.frame(mesh).unwrap();
        let base = problem.linearize(mesh, &frame).unwrap();
        let [fd, _] = fd_hessians(&problem, mesh, &frame, &base).unwrap();
        let exact = polygon_area_hessian(mesh, &space, &frame.normals);
        let scale = max_abs(&exact);
        // Entries are dimensionless; the forward difference is off by
        // O(1e-6), which matters where the exact Hessian vanishes.
        let tol = 0.05 * scale + 1e-5;
        for i in 0..fd.nrows() {
            for j in 0..fd.ncols() {
                assert!((fd[(i, j)] - exact[(i, j)]).abs() <= tol, "({i},{j}): {} vs {}", fd[(i, j)], exact[(i, j)]);
            }
        }
        exact
    }

    #[test]
    fn area_hessian_on_disk_matches_polygon_formula() {
        let exact = check_area_hessian(&ring_disk(24), 0);
        assert!(max_abs(&exact) > 0.1);
    }

    #[test]
    fn area_hessian_on_straight_flanks_vanishes() {
        // With the rim neighbours pinned only the straight flanks of the
        // bar move, where the area is linear in the normal amplitudes.
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let exact = check_area_hessian(&mesh, 3);
        assert!(max_abs(&exact) < 1e-12);
    }

    #[test]
    fn area_hessian_is_consistent_to_second_order() {
        let mesh = build_reference_geometry(&GeometryParams::default()).unwrap();
        let space = Arc::new(DesignSpace::new(&mesh, ExtensionKind::default(), 3).unwrap());
        let problem = AreaProblem { space };
        let frame = problem.frame(&mesh).unwrap();
        let base = problem.linearize(&mesh, &frame).unwrap();
        let [h, _] = fd_hessians(&problem, &mesh, &frame, &base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir: Vec<f64> = frame.lumped.iter().map(|l| l * rng.random_range(-1.0..1.0)).collect();
        let remainder = |eps: f64| {
            let alpha: Vec<f64> = dir.iter().map(|d| eps * d).collect();
            let moved = problem.displace(&mesh, &frame, &alpha).unwrap();
            let g = problem.linearize(&moved, &problem.frame(&moved).unwrap()).unwrap().gradients[0].clone();
            let model = mat_vec(&h, &alpha);
            g.iter().zip(&base.gradients[0]).zip(&model).map(|((a, b), c)| (a - b - c).powi(2)).sum::<f64>().sqrt()
        };
        let (r1, r2) = (remainder(2e-2), remainder(1e-2));
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "remainder ratio {ratio}");
    }
}

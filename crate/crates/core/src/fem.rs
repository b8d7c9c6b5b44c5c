//! Piecewise linear finite elements for 2D nonlinear magnetostatics.
//!
//! The unknown `u` is the z-component of the vector potential, zero on the
//! outer boundary. The flux density is `B = (du/dy, -du/dx)`, so `|B| = |grad u|`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::FemError;
use crate::linalg::{norm2, Cholesky, SymmetricMatrix, SymmetricPattern, FIXED};
use crate::mesh::{Mesh, Point, Region};

/// Reluctivity of vacuum, `1 / (4 pi 1e-7)` in m/H.
pub const NU0: f64 = 1.0 / (4.0 * PI * 1e-7);

/// Reluctivity law of the iron as a function of `s = |B|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum IronLaw {
    Linear { nu_iron: f64 },
    /// `nu(s) = k1 + k2 exp(k3 s^2)`.
    Brauer { k1: f64, k2: f64, k3: f64 },
}

impl Default for IronLaw {
    fn default() -> Self {
        IronLaw::Brauer { k1: 200.0, k2: 0.001, k3: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReluctivityModel {
    pub nu0: f64,
    pub iron: IronLaw,
}

impl Default for ReluctivityModel {
    fn default() -> Self {
        Self { nu0: NU0, iron: IronLaw::default() }
    }
}

impl ReluctivityModel {
    pub fn linear(nu_iron: f64) -> Self {
        Self { nu0: NU0, iron: IronLaw::Linear { nu_iron } }
    }

    /// Iron reluctivity at `s`.
    #[inline]
    pub fn nu_hat(&self, s: f64) -> f64 {
        match self.iron {
            IronLaw::Linear { nu_iron } => nu_iron,
            IronLaw::Brauer { k1, k2, k3 } => k1 + k2 * (k3 * s * s).exp(),
        }
    }

    /// `nu_hat'(s) / s`, finite at `s = 0`.
    #[inline]
    pub fn dnu_over_s(&self, s: f64) -> f64 {
        match self.iron {
            IronLaw::Linear { .. } => 0.0,
            IronLaw::Brauer { k2, k3, .. } => 2.0 * k2 * k3 * (k3 * s * s).exp(),
        }
    }

    /// `d/ds (nu_hat(s) s)`, the slope of the iron H-B curve.
    pub fn flux_slope(&self, s: f64) -> f64 {
        self.nu_hat(s) + s * s * self.dnu_over_s(s)
    }

    /// `(nu, nu'/s)` for a triangle tagged `region`.
    #[inline]
    pub fn eval(&self, region: Region, s: f64) -> (f64, f64) {
        match region {
            Region::Iron => (self.nu_hat(s), self.dnu_over_s(s)),
            _ => (self.nu0, 0.0),
        }
    }

    fn samples(s_max: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |i| s_max * i as f64 / n as f64)
    }

    /// Checks positivity and a strictly increasing H-B curve on `[0, s_max]`.
    pub fn check_monotone(&self, s_max: f64, n: usize) -> Result<(), FemError> {
        if !(self.nu0 > 0.0) {
            return Err(FemError::Material(format!("nu0 must be positive, got {}", self.nu0)));
        }
        for s in Self::samples(s_max, n) {
            let nu = self.nu_hat(s);
            if !(nu > 0.0) {
                return Err(FemError::Material(format!("nu({s:.3} T) = {nu:e} is not positive")));
            }
            let slope = self.flux_slope(s);
            if !(slope > 0.0) {
                return Err(FemError::Material(format!("H-B curve not increasing at {s:.3} T (slope {slope:e})")));
            }
        }
        Ok(())
    }

    /// Checks that iron is at least as permeable as air on `[0, s_max]`.
    pub fn check_below_air(&self, s_max: f64, n: usize) -> Result<(), FemError> {
        for s in Self::samples(s_max, n) {
            let nu = self.nu_hat(s);
            if nu > self.nu0 {
                return Err(FemError::Material(format!("nu({s:.3} T) = {nu:e} exceeds nu0 = {:e}", self.nu0)));
            }
        }
        Ok(())
    }
}

/// Stator winding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationParams {
    /// Peak conductor current in amperes.
    pub amplitude: f64,
    /// Conductors per coil sector.
    pub turns: f64,
    /// Angle between the stator field and the y-axis, degrees.
    pub field_angle_deg: f64,
    pub pole_pairs: u32,
}

impl Default for ExcitationParams {
    fn default() -> Self {
        Self { amplitude: 10.0, turns: 4000.0, field_angle_deg: 45.0, pole_pairs: 1 }
    }
}

/// Piecewise constant current densities on the coil sectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurrentExcitation {
    /// Density in A/m^2 for `Region::Coil(k)` at index `k`.
    pub densities: Vec<f64>,
    /// Net sector currents in A.
    pub currents: Vec<f64>,
}

impl CurrentExcitation {
    /// No current anywhere.
    pub fn none() -> Self {
        Self::default()
    }

    /// Sinusoidal sector currents `I_k = turns * amplitude * cos(p (theta_k - theta_c))`
    /// with sector centres `theta_k` taken from the mesh. The current
    /// pattern is rotated so that the field in the bore points at
    /// `field_angle_deg` from the y-axis towards the x-axis. The mean
    /// current is removed so the circuit is closed exactly.
    pub fn from_mesh(params: &ExcitationParams, mesh: &Mesh) -> Self {
        let n = mesh
            .regions()
            .iter()
            .filter_map(|r| if let Region::Coil(k) = r { Some(*k as usize + 1) } else { None })
            .max()
            .unwrap_or(0);
        let mut area = vec![0.0; n];
        let mut moment = vec![[0.0; 2]; n];
        for t in 0..mesh.num_triangles() {
            if let Region::Coil(k) = mesh.regions()[t] {
                let (a, c) = (mesh.area(t), mesh.centroid(t));
                area[k as usize] += a;
                moment[k as usize][0] += a * c[0];
                moment[k as usize][1] += a * c[1];
            }
        }
        // Current density cos(theta - theta_c) drives a bore field at theta_c - 90 deg.
        let field_dir = (90.0 - params.field_angle_deg).to_radians();
        let theta_c = field_dir + 0.5 * PI;
        let p = params.pole_pairs as f64;
        let mut currents: Vec<f64> = moment
            .iter()
            .map(|m| params.turns * params.amplitude * (p * (m[1].atan2(m[0]) - theta_c)).cos())
            .collect();
        let mean = currents.iter().sum::<f64>() / n.max(1) as f64;
        currents.iter_mut().for_each(|i| *i -= mean);
        let densities = currents.iter().zip(&area).map(|(i, a)| if *a > 0.0 { i / a } else { 0.0 }).collect();
        Self { densities, currents }
    }

    #[inline]
    pub fn density(&self, region: Region) -> f64 {
        match region {
            Region::Coil(k) => self.densities.get(k as usize).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Scales all currents by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            densities: self.densities.iter().map(|d| d * s).collect(),
            currents: self.currents.iter().map(|i| i * s).collect(),
        }
    }
}

/// Right-hand side of the state equation.
pub trait Load: Sync {
    /// `int J_z phi_a` over triangle `t` for its three corners.
    fn element_load(&self, mesh: &Mesh, t: usize) -> [f64; 3];
}

impl Load for CurrentExcitation {
    fn element_load(&self, mesh: &Mesh, t: usize) -> [f64; 3] {
        let j = self.density(mesh.regions()[t]);
        [j * mesh.area(t) / 3.0; 3]
    }
}

/// A smooth current density `J_z(x)` integrated with the edge-midpoint rule.
pub struct DistributedLoad<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> Load for DistributedLoad<F> {
    fn element_load(&self, mesh: &Mesh, t: usize) -> [f64; 3] {
        let p = mesh.corners(t);
        let mid = |a: usize, b: usize| (self.0)([0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])]);
        let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
        let w = mesh.area(t) / 6.0;
        [w * (m01 + m20), w * (m01 + m12), w * (m12 + m20)]
    }
}

/// Nodal values of `u` on every mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self { values: vec![0.0; mesh.num_vertices()] }
    }

    /// Interpolates `f` at the vertices, forcing zero on the Dirichlet boundary.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        let values = mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(v, &x)| if mesh.is_dirichlet(v) { 0.0 } else { f(x) })
            .collect();
        Self { values }
    }

    /// Constant gradient on triangle `t`.
    pub fn gradient(&self, mesh: &Mesh, t: usize) -> Point {
        let e = ElementGeometry::new(mesh.corners(t));
        e.gradient(mesh.triangles()[t].map(|v| self.values[v]))
    }

    /// `|B|` per triangle.
    pub fn flux_density(&self, mesh: &Mesh) -> Vec<f64> {
        (0..mesh.num_triangles())
            .map(|t| {
                let g = self.gradient(mesh, t);
                g[0].hypot(g[1])
            })
            .collect()
    }
}

/// `D = 2 * area` and the barycentric gradients of a P1 triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub d: f64,
    pub grads: [Point; 3],
}

impl ElementGeometry {
    #[inline]
    pub fn new(p: [Point; 3]) -> Self {
        let d = crate::mesh::signed_area2(p[0], p[1], p[2]);
        let mut grads = [[0.0; 2]; 3];
        for a in 0..3 {
            let (b, c) = (p[(a + 1) % 3], p[(a + 2) % 3]);
            grads[a] = [(b[1] - c[1]) / d, (c[0] - b[0]) / d];
        }
        Self { d, grads }
    }

    #[inline]
    pub fn area(&self) -> f64 {
        0.5 * self.d
    }

    #[inline]
    pub fn gradient(&self, u: [f64; 3]) -> Point {
        let mut g = [0.0; 2];
        for a in 0..3 {
            g[0] += u[a] * self.grads[a][0];
            g[1] += u[a] * self.grads[a][1];
        }
        g
    }
}

/// A Newton step reducing the residual by less than this factor stagnates.
const STAGNATION_RATIO: f64 = 0.5;
/// Stagnation within this multiple of the target counts as convergence.
const STAGNATION_SLACK: f64 = 100.0;
/// Stagnation with a Newton correction this small relative to the field
/// also counts: the iterate is fixed to working precision. It still needs a
/// residual below `STAGNATION_FLOOR` times the load, so a degenerate mesh
/// cannot pass off a stalled solve.
const STAGNATION_STEP: f64 = 1e-12;
const STAGNATION_FLOOR: f64 = 1e-8;

/// Degree-of-freedom numbering and matrix pattern of the state problem.
///
/// Depends only on mesh topology, so one instance serves every deformed
/// copy of the same mesh.
#[derive(Debug, Clone)]
pub struct StateSpace {
    dof: Vec<usize>,
    free: Vec<usize>,
    pattern: Arc<SymmetricPattern>,
}

/// Converged state with solver statistics.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub field: NodalField,
    pub iterations: usize,
    pub residual: f64,
}

impl StateSpace {
    pub fn new(mesh: &Mesh) -> Result<Self, FemError> {
        let mut dof = vec![FIXED; mesh.num_vertices()];
        let mut free = Vec::new();
        for v in 0..mesh.num_vertices() {
            if !mesh.is_dirichlet(v) {
                dof[v] = free.len();
                free.push(v);
            }
        }
        let elements = mesh.triangles().iter().flat_map(|t| t.map(|v| dof[v])).collect();
        let pattern = Arc::new(SymmetricPattern::new(free.len(), 3, elements)?);
        Ok(Self { dof, free, pattern })
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Free index of vertex `v`, `None` on the Dirichlet boundary.
    pub fn dof(&self, v: usize) -> Option<usize> {
        (self.dof[v] != FIXED).then_some(self.dof[v])
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    fn check(&self, mesh: &Mesh, field: &NodalField) -> Result<(), FemError> {
        if field.values.len() != mesh.num_vertices() || self.dof.len() != mesh.num_vertices() {
            return Err(FemError::SizeMismatch { expected: mesh.num_vertices(), got: field.values.len() });
        }
        Ok(())
    }

    /// Free-vertex restriction of a per-vertex vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| full[v]).collect()
    }

    /// Per-vertex vector from free values, zero on the boundary.
    pub fn prolong(&self, free: &[f64], n: usize) -> Vec<f64> {
        let mut full = vec![0.0; n];
        for (i, &v) in self.free.iter().enumerate() {
            full[v] = free[i];
        }
        full
    }

    /// Load vector over free vertices.
    pub fn load_vector(&self, mesh: &Mesh, load: &dyn Load) -> Vec<f64> {
        let mut f = vec![0.0; self.free.len()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let fe = load.element_load(mesh, t);
            for a in 0..3 {
                if let Some(i) = self.dof(tri[a]) {
                    f[i] += fe[a];
                }
            }
        }
        f
    }

    /// `a(u, phi_i)` over free vertices, without the load.
    pub fn internal_forces(&self, mesh: &Mesh, field: &NodalField, materials: &ReluctivityModel) -> Result<Vec<f64>, FemError> {
        self.check(mesh, field)?;
        let mut r = vec![0.0; self.free.len()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let e = ElementGeometry::new(mesh.corners(t));
            let g = e.gradient(tri.map(|v| field.values[v]));
            let s = g[0].hypot(g[1]);
            let (nu, _) = materials.eval(mesh.regions()[t], s);
            let c = nu * e.area();
            for a in 0..3 {
                if let Some(i) = self.dof(tri[a]) {
                    r[i] += c * (g[0] * e.grads[a][0] + g[1] * e.grads[a][1]);
                }
            }
        }
        Ok(r)
    }

    /// Galerkin residual `r_i = a(u, phi_i) - f(phi_i)` over free vertices.
    pub fn assemble_residual(
        &self,
        mesh: &Mesh,
        field: &NodalField,
        materials: &ReluctivityModel,
        load: &dyn Load,
    ) -> Result<Vec<f64>, FemError> {
        let mut r = self.internal_forces(mesh, field, materials)?;
        for (ri, fi) in r.iter_mut().zip(self.load_vector(mesh, load)) {
            *ri -= fi;
        }
        Ok(r)
    }

    /// Newton tangent `A'(u)` restricted to free vertices.
    pub fn assemble_tangent(&self, mesh: &Mesh, field: &NodalField, materials: &ReluctivityModel) -> Result<SymmetricMatrix, FemError> {
        self.check(mesh, field)?;
        let mut k = self.pattern.zeros();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            k.scatter(t, &element_tangent(mesh.corners(t), tri.map(|v| field.values[v]), mesh.regions()[t], materials));
        }
        Ok(k)
    }

    /// Damped Newton iteration with backtracking on the residual norm.
    pub fn solve_state(
        &self,
        mesh: &Mesh,
        materials: &ReluctivityModel,
        load: &dyn Load,
        initial: &NodalField,
        tol: f64,
        max_newton: usize,
    ) -> Result<StateSolution, FemError> {
        if !(tol > 0.0) {
            return Err(FemError::Tolerance(tol));
        }
        self.check(mesh, initial)?;
        let f = self.load_vector(mesh, load);
        let load_norm = norm2(&f);
        let target = tol * load_norm.max(1.0);
        let mut field = initial.clone();
        for (v, &d) in mesh.dirichlet().iter().enumerate() {
            if d {
                field.values[v] = 0.0;
            }
        }
        let residual_of = |field: &NodalField| -> Result<(Vec<f64>, f64), FemError> {
            let mut r = self.internal_forces(mesh, field, materials)?;
            r.iter_mut().zip(&f).for_each(|(r, f)| *r -= f);
            let n = norm2(&r);
            Ok((r, n))
        };
        let (mut r, mut rn) = residual_of(&field)?;
        for it in 0..max_newton {
            if rn <= target {
                return Ok(StateSolution { field, iterations: it, residual: rn });
            }
            let k = self.assemble_tangent(mesh, &field, materials)?;
            let mut step = r.clone();
            k.factor()?.solve_in_place(&mut step);
            let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let negligible = max_abs(&step) <= STAGNATION_STEP * max_abs(&field.values) && rn <= STAGNATION_FLOOR * load_norm;
            let mut lambda = 1.0;
            loop {
                let mut trial = field.clone();
                for (i, &v) in self.free.iter().enumerate() {
                    trial.values[v] -= lambda * step[i];
                }
                let (rt, rtn) = residual_of(&trial)?;
                // Strongly saturated iron raises the rounding level of the
                // residual; a full step that no longer helps near the target
                // means it has been reached, as does a negligible correction.
                if lambda == 1.0 && rtn > STAGNATION_RATIO * rn && (rn <= STAGNATION_SLACK * target || negligible) {
                    return Ok(StateSolution { field, iterations: it, residual: rn });
                }
                if rtn <= (1.0 - 1e-4 * lambda) * rn || lambda <= 1e-4 {
                    field = trial;
                    r = rt;
                    rn = rtn;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if rn <= target {
            return Ok(StateSolution { field, iterations: max_newton, residual: rn });
        }
        Err(FemError::NotConverged { iterations: max_newton, residual: rn })
    }

    /// Solves `A'(u) p = -rhs` on free vertices; `rhs` is per vertex and
    /// its Dirichlet entries are ignored.
    pub fn solve_adjoint(
        &self,
        mesh: &Mesh,
        field: &NodalField,
        materials: &ReluctivityModel,
        rhs: &[f64],
    ) -> Result<NodalField, FemError> {
        let factor = self.assemble_tangent(mesh, field, materials)?.factor()?;
        self.solve_adjoint_with(&factor, mesh, rhs)
    }

    /// Adjoint solve reusing a tangent factorization.
    pub fn solve_adjoint_with(&self, factor: &Cholesky, mesh: &Mesh, rhs: &[f64]) -> Result<NodalField, FemError> {
        if rhs.len() != mesh.num_vertices() {
            return Err(FemError::SizeMismatch { expected: mesh.num_vertices(), got: rhs.len() });
        }
        let mut b: Vec<f64> = self.free.iter().map(|&v| -rhs[v]).collect();
        factor.solve_in_place(&mut b);
        Ok(NodalField { values: self.prolong(&b, mesh.num_vertices()) })
    }
}

/// Row-major 3x3 element tangent
/// `A [nu grad phi_a . grad phi_b + (nu'/s)(g . grad phi_a)(g . grad phi_b)]`.
pub fn element_tangent(p: [Point; 3], u: [f64; 3], region: Region, materials: &ReluctivityModel) -> [f64; 9] {
    let e = ElementGeometry::new(p);
    let g = e.gradient(u);
    let s = g[0].hypot(g[1]);
    let (nu, dnu) = materials.eval(region, s);
    let area = e.area();
    let gp: [f64; 3] = std::array::from_fn(|a| g[0] * e.grads[a][0] + g[1] * e.grads[a][1]);
    let mut ke = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            let gg = e.grads[a][0] * e.grads[b][0] + e.grads[a][1] * e.grads[b][1];
            ke[3 * a + b] = area * (nu * gg + dnu * gp[a] * gp[b]);
        }
    }
    ke
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_reference_geometry, EdgeMarker, GeometryParams, MarkedEdge};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Structured triangulation of the unit square with Dirichlet boundary.
    pub(crate) fn unit_square(n: usize, region: Region) -> Mesh {
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.extend_from_slice(&[[a, b, c], [a, c, d]]);
                } else {
                    triangles.extend_from_slice(&[[a, b, d], [b, c, d]]);
                }
            }
        }
        let mut edges = Vec::new();
        for k in 0..n {
            for (a, b) in [(idx(k, 0), idx(k + 1, 0)), (idx(n, k), idx(n, k + 1)), (idx(k, n), idx(k + 1, n)), (idx(0, k), idx(0, k + 1))] {
                edges.push(MarkedEdge { a, b, marker: EdgeMarker::OuterDirichlet });
            }
        }
        let regions = vec![region; triangles.len()];
        Mesh::new(vertices, triangles, regions, edges).unwrap()
    }

    fn exact(x: Point) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    /// L2 error against `exact` with a 3-point edge-midpoint rule.
    fn l2_error(mesh: &Mesh, u: &NodalField) -> f64 {
        let mut err = 0.0;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let p = mesh.corners(t);
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let m = [0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])];
                let uh = 0.5 * (u.values[tri[a]] + u.values[tri[b]]);
                err += mesh.area(t) / 3.0 * (uh - exact(m)).powi(2);
            }
        }
        err.sqrt()
    }

    fn manufactured_error(mesh: &Mesh, nu: f64) -> f64 {
        let space = StateSpace::new(mesh).unwrap();
        let materials = ReluctivityModel { nu0: nu, iron: IronLaw::Linear { nu_iron: nu } };
        let load = DistributedLoad(|x: Point| 2.0 * PI * PI * nu * exact(x));
        let u = space.solve_state(mesh, &materials, &load, &NodalField::zeros(mesh), 1e-12, 5).unwrap();
        l2_error(mesh, &u.field)
    }

    #[test]
    fn brauer_derivative_matches_finite_difference() {
        let m = ReluctivityModel::default();
        for s in [0.0, 0.3, 1.1, 1.9] {
            let h = 1e-6;
            let fd = (m.nu_hat(s + h) - m.nu_hat(s - h)) / (2.0 * h);
            if s > 0.0 {
                assert!((fd - s * m.dnu_over_s(s)).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
        assert_eq!(m.dnu_over_s(0.0), 2.0 * 0.001 * 6.0);
    }

    #[test]
    fn monotonicity_check_detects_violation() {
        assert!(ReluctivityModel::default().check_monotone(3.0, 300).is_ok());
        assert!(ReluctivityModel::default().check_below_air(1.8, 180).is_ok());
        let bad = ReluctivityModel { nu0: NU0, iron: IronLaw::Brauer { k1: 1.0, k2: 1000.0, k3: -6.0 } };
        assert!(matches!(bad.check_monotone(3.0, 300), Err(FemError::Material(_))));
    }

    #[test]
    fn excitation_is_closed_and_oriented() {
        let mesh = build_reference_geometry(&GeometryParams { mesh_size: 5e-3, outer_mesh_size: 1e-2, ..Default::default() }).unwrap();
        let exc = CurrentExcitation::from_mesh(&ExcitationParams::default(), &mesh);
        assert_eq!(exc.densities.len(), 12);
        let net: f64 = (0..mesh.num_triangles()).map(|t| exc.density(mesh.regions()[t]) * mesh.area(t)).sum();
        let scale: f64 = exc.currents.iter().map(|i| i.abs()).sum();
        assert!(net.abs() < 1e-12 * scale);

        // Bore field points 45 degrees between +x and +y.
        let space = StateSpace::new(&mesh).unwrap();
        let u = space
            .solve_state(&mesh, &ReluctivityModel::linear(NU0), &exc, &NodalField::zeros(&mesh), 1e-10, 5)
            .unwrap()
            .field;
        let (mut bx, mut by) = (0.0, 0.0);
        for t in 0..mesh.num_triangles() {
            let c = mesh.centroid(t);
            if c[0].hypot(c[1]) < 0.03 {
                let g = u.gradient(&mesh, t);
                bx += mesh.area(t) * g[1];
                by -= mesh.area(t) * g[0];
            }
        }
        let angle = by.atan2(bx).to_degrees();
        assert!((angle - 45.0).abs() < 2.0, "bore field angle {angle}");
    }

    #[test]
    fn zero_field_zero_source_has_zero_residual() {
        let mesh = unit_square(4, Region::Iron);
        let space = StateSpace::new(&mesh).unwrap();
        let r = space
            .assemble_residual(&mesh, &NodalField::zeros(&mesh), &ReluctivityModel::default(), &CurrentExcitation::none())
            .unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        let sol = space
            .solve_state(&mesh, &ReluctivityModel::default(), &CurrentExcitation::none(), &NodalField::zeros(&mesh), 1e-10, 50)
            .unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.field.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let mesh = unit_square(2, Region::Air);
        let space = StateSpace::new(&mesh).unwrap();
        let bad = NodalField { values: vec![0.0; 3] };
        assert!(matches!(
            space.assemble_tangent(&mesh, &bad, &ReluctivityModel::default()),
            Err(FemError::SizeMismatch { .. })
        ));
        assert!(matches!(
            space.solve_state(&mesh, &ReluctivityModel::default(), &CurrentExcitation::none(), &NodalField::zeros(&mesh), 0.0, 5),
            Err(FemError::Tolerance(_))
        ));
    }

    #[test]
    fn linear_solution_is_consistent_and_energy_balanced() {
        let mesh = unit_square(12, Region::Air);
        let space = StateSpace::new(&mesh).unwrap();
        let m = ReluctivityModel::linear(1.0);
        let load = DistributedLoad(|x: Point| 1.0 + x[0] * x[1]);
        let sol = space.solve_state(&mesh, &m, &load, &NodalField::zeros(&mesh), 1e-13, 5).unwrap();
        let f = space.load_vector(&mesh, &load);
        let r = space.assemble_residual(&mesh, &sol.field, &m, &load).unwrap();
        assert!(norm2(&r) < 1e-12 * norm2(&f));
        // int nu |grad u|^2 = int J u
        let energy: f64 = (0..mesh.num_triangles())
            .map(|t| {
                let g = sol.field.gradient(&mesh, t);
                mesh.area(t) * NU0 * (g[0] * g[0] + g[1] * g[1])
            })
            .sum();
        let work: f64 = space.restrict(&sol.field.values).iter().zip(&f).map(|(u, f)| u * f).sum();
        assert!((energy - work).abs() < 1e-10 * work.abs(), "{energy} vs {work}");

        // Solution map is linear in the source.
        let scaled = DistributedLoad(|x: Point| 3.0 * (1.0 + x[0] * x[1]));
        let sol3 = space.solve_state(&mesh, &m, &scaled, &NodalField::zeros(&mesh), 1e-13, 5).unwrap();
        for (a, b) in sol.field.values.iter().zip(&sol3.field.values) {
            assert!((3.0 * a - b).abs() < 1e-11 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn manufactured_residual_is_first_order() {
        let mut prev = None;
        for n in [8, 16, 32] {
            let mesh = unit_square(n, Region::Air);
            let space = StateSpace::new(&mesh).unwrap();
            let m = ReluctivityModel { nu0: 1.0, iron: IronLaw::Linear { nu_iron: 1.0 } };
            let load = DistributedLoad(|x: Point| 2.0 * PI * PI * exact(x));
            let u = NodalField::interpolate(&mesh, exact);
            let r = norm2(&space.assemble_residual(&mesh, &u, &m, &load).unwrap());
            // Residual entries scale like h^3 on an unstructured pattern of
            // O(h^-2) entries, so the Euclidean norm is O(h^2) or better.
            if let Some(p) = prev {
                assert!(r < 0.6 * p, "{r} vs {p}");
            }
            prev = Some(r);
        }
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let coarse = unit_square(8, Region::Air);
        let fine = coarse.uniform_refine();
        let (e0, e1) = (manufactured_error(&coarse, 1.0), manufactured_error(&fine, 1.0));
        assert!(e0 / e1 >= 3.6, "ratio {}", e0 / e1);
    }

    #[test]
    fn linear_tangent_is_field_independent() {
        let mesh = unit_square(5, Region::Iron);
        let space = StateSpace::new(&mesh).unwrap();
        let m = ReluctivityModel::linear(300.0);
        let a = space.assemble_tangent(&mesh, &NodalField::zeros(&mesh), &m).unwrap();
        let b = space.assemble_tangent(&mesh, &NodalField::interpolate(&mesh, |x| x[0] * 3.0), &m).unwrap();
        assert_eq!(a.to_dense(), b.to_dense());
    }

    fn random_field(mesh: &Mesh, rng: &mut ChaCha8Rng, scale: f64) -> NodalField {
        let mut f = NodalField::zeros(mesh);
        for v in (0..mesh.num_vertices()).filter(|&v| !mesh.is_dirichlet(v)) {
            f.values[v] = scale * rng.random_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn element_tangent_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ReluctivityModel::default();
        for _ in 0..100 {
            let p: [Point; 3] = [[0.0, 0.0], [1.0 + rng.random::<f64>(), 0.2], [0.3, 1.0 + rng.random::<f64>()]];
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let ke = element_tangent(p, u, Region::Iron, &m);
            let max = ke.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for a in 0..3 {
                for b in 0..3 {
                    assert!((ke[3 * a + b] - ke[3 * b + a]).abs() <= 1e-12 * max);
                }
            }
        }
    }

    #[test]
    fn tangent_matches_residual_finite_difference() {
        let mesh = unit_square(6, Region::Iron);
        let space = StateSpace::new(&mesh).unwrap();
        let m = ReluctivityModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_field(&mesh, &mut rng, 0.1);
        let w = random_field(&mesh, &mut rng, 1.0);
        let none = CurrentExcitation::none();
        let r0 = space.assemble_residual(&mesh, &u, &m, &none).unwrap();
        let aw = space.assemble_tangent(&mesh, &u, &m).unwrap().matvec(&space.restrict(&w.values));
        let mut errs = Vec::new();
        for eps in [1e-3, 1e-4, 1e-5] {
            let mut ue = u.clone();
            ue.values.iter_mut().zip(&w.values).for_each(|(a, b)| *a += eps * b);
            let r1 = space.assemble_residual(&mesh, &ue, &m, &none).unwrap();
            let diff: Vec<f64> = r1.iter().zip(&r0).zip(&aw).map(|((a, b), c)| (a - b) / eps - c).collect();
            errs.push(norm2(&diff));
        }
        assert!(errs[1] < 0.2 * errs[0] && errs[2] < 0.2 * errs[1], "{errs:?}");
    }

    #[test]
    fn tangent_restriction_is_positive_definite() {
        use faer::{Mat, Side};
        let mesh = unit_square(12, Region::Iron);
        let space = StateSpace::new(&mesh).unwrap();
        let m = ReluctivityModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_field(&mesh, &mut rng, 0.05);
        let k = space.assemble_tangent(&mesh, &u, &m).unwrap();
        let mut pick: Vec<usize> = (0..space.num_free()).collect();
        for i in 0..50 {
            let j = rng.random_range(i..pick.len());
            pick.swap(i, j);
        }
        let sub = Mat::from_fn(50, 50, |i, j| k.get(pick[i], pick[j]));
        let eig = sub.self_adjoint_eigenvalues(Side::Lower).expect("evd");
        assert!(eig[0] > 0.0, "{:?}", &eig[..3]);
    }

    #[test]
    fn small_field_brauer_matches_linearization() {
        let mesh = build_reference_geometry(&GeometryParams { mesh_size: 5e-3, outer_mesh_size: 1e-2, ..Default::default() }).unwrap();
        let space = StateSpace::new(&mesh).unwrap();
        let exc = CurrentExcitation::from_mesh(&ExcitationParams { turns: 0.01, ..Default::default() }, &mesh);
        let brauer = ReluctivityModel::default();
        let linear = ReluctivityModel::linear(brauer.nu_hat(0.0));
        let a = space.solve_state(&mesh, &brauer, &exc, &NodalField::zeros(&mesh), 1e-12, 50).unwrap().field;
        let b = space.solve_state(&mesh, &linear, &exc, &NodalField::zeros(&mesh), 1e-12, 50).unwrap().field;
        let diff = norm2(&a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(diff < 0.01 * norm2(&b.values));
    }

    #[test]
    fn adjoint_of_zero_rhs_is_zero() {
        let mesh = unit_square(4, Region::Iron);
        let space = StateSpace::new(&mesh).unwrap();
        let p = space
            .solve_adjoint(&mesh, &NodalField::zeros(&mesh), &ReluctivityModel::default(), &vec![0.0; mesh.num_vertices()])
            .unwrap();
        assert!(p.values.iter().all(|&x| x == 0.0));
    }
}

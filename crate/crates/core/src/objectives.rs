//! Negative Arkkio torque, iron volume and their discrete shape gradients.

use serde::{Deserialize, Serialize};

use crate::error::{FemError, ObjectiveError};
use crate::fem::{CurrentExcitation, ElementGeometry, NodalField, ReluctivityModel, StateSpace};
use crate::mesh::{Mesh, Point, Region};

/// Machine data entering the objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveParams {
    /// Axial length in meters.
    pub axial_length: f64,
    /// Inner radius of the torque ring.
    pub r1: f64,
    /// Outer radius of the torque ring.
    pub r2: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self { axial_length: 0.01, r1: 0.0445, r2: 0.0505 }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.r1 > 0.0 && self.r1 < self.r2) {
            return Err(ObjectiveError::GapRadii { r1: self.r1, r2: self.r2 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValues {
    /// Negative torque in N m.
    pub j1: f64,
    /// Iron volume in m^3.
    pub j2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    J1,
    J2,
}

/// Derivative of an objective with respect to every vertex position.
/// Entries are zero on immovable vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGradient {
    pub objective: Objective,
    pub per_vertex: Vec<Point>,
}

impl ShapeGradient {
    /// Directional derivative along a vertex displacement field.
    pub fn apply(&self, v: &[Point]) -> f64 {
        self.per_vertex.iter().zip(v).map(|(g, v)| g[0] * v[0] + g[1] * v[1]).sum()
    }
}

/// `Q(x) = |x|^-1 [[x1 x2, (x2^2 - x1^2)/2], [(x2^2 - x1^2)/2, -x1 x2]]`, so that
/// `grad u . Q grad u = r B_r B_phi`.
pub fn q_matrix(x1: f64, x2: f64) -> Result<[[f64; 2]; 2], ObjectiveError> {
    let r = x1.hypot(x2);
    if r == 0.0 {
        return Err(ObjectiveError::Origin);
    }
    let off = 0.5 * (x2 * x2 - x1 * x1) / r;
    let diag = x1 * x2 / r;
    Ok([[diag, off], [off, -diag]])
}

#[inline]
fn q_apply(q: &[[f64; 2]; 2], g: Point) -> Point {
    [q[0][0] * g[0] + q[0][1] * g[1], q[1][0] * g[0] + q[1][1] * g[1]]
}

fn torque_factor(mesh: &Mesh, params: &ObjectiveParams, nu0: f64) -> Result<f64, ObjectiveError> {
    params.validate()?;
    if !mesh.regions().contains(&Region::GapRing) {
        return Err(ObjectiveError::EmptyGapRing);
    }
    Ok(nu0 * params.axial_length / (params.r2 - params.r1))
}

/// `J1 = -nu0 L / (r2 - r1) sum_{gap ring} area grad u . Q(centroid) grad u`.
pub fn torque_arkkio(mesh: &Mesh, field: &NodalField, params: &ObjectiveParams, nu0: f64) -> Result<f64, ObjectiveError> {
    let c = torque_factor(mesh, params, nu0)?;
    let mut sum = 0.0;
    for t in (0..mesh.num_triangles()).filter(|&t| mesh.regions()[t] == Region::GapRing) {
        let g = field.gradient(mesh, t);
        let m = mesh.centroid(t);
        let qg = q_apply(&q_matrix(m[0], m[1])?, g);
        sum += mesh.area(t) * (g[0] * qg[0] + g[1] * qg[1]);
    }
    Ok(-c * sum)
}

/// `L` times the iron area.
pub fn volume(mesh: &Mesh, axial_length: f64) -> f64 {
    axial_length * mesh.region_area(Region::Iron)
}

/// `dJ1/du` per vertex.
pub fn torque_state_derivative(mesh: &Mesh, field: &NodalField, params: &ObjectiveParams, nu0: f64) -> Result<Vec<f64>, ObjectiveError> {
    let c = torque_factor(mesh, params, nu0)?;
    let mut d = vec![0.0; mesh.num_vertices()];
    for t in (0..mesh.num_triangles()).filter(|&t| mesh.regions()[t] == Region::GapRing) {
        let tri = mesh.triangles()[t];
        let e = ElementGeometry::new(mesh.corners(t));
        let g = e.gradient(tri.map(|v| field.values[v]));
        let m = mesh.centroid(t);
        let qg = q_apply(&q_matrix(m[0], m[1])?, g);
        for a in 0..3 {
            d[tri[a]] -= c * e.area() * 2.0 * (qg[0] * e.grads[a][0] + qg[1] * e.grads[a][1]);
        }
    }
    Ok(d)
}

#[inline]
fn perp(v: Point) -> Point {
    [v[1], -v[0]]
}

/// Gradient of the iron volume with respect to movable vertices.
pub fn volume_gradient(mesh: &Mesh, axial_length: f64) -> ShapeGradient {
    let mut g = vec![[0.0; 2]; mesh.num_vertices()];
    let movable = mesh.movable();
    for t in (0..mesh.num_triangles()).filter(|&t| mesh.regions()[t] == Region::Iron) {
        let tri = mesh.triangles()[t];
        let p = mesh.corners(t);
        for c in 0..3 {
            if movable[tri[c]] {
                let dd = perp(sub(p[(c + 1) % 3], p[(c + 2) % 3]));
                g[tri[c]][0] += 0.5 * axial_length * dd[0];
                g[tri[c]][1] += 0.5 * axial_length * dd[1];
            }
        }
    }
    ShapeGradient { objective: Objective::J2, per_vertex: g }
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Derivative of `sum_T p^T r_T(u, X)` with respect to the movable vertex
/// positions at fixed nodal `u` and `p`.
///
/// Per triangle, with `D = 2 area`, `g = grad u`, `q = grad p`:
/// `Phi = D/2 nu(|g|) g.q - J D/6 sum p`.
pub fn residual_shape_derivative(
    mesh: &Mesh,
    state: &NodalField,
    adjoint: &NodalField,
    materials: &ReluctivityModel,
    source: &CurrentExcitation,
) -> Vec<Point> {
    let movable = mesh.movable();
    let mut out = vec![[0.0; 2]; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !tri.iter().any(|&v| movable[v]) {
            continue;
        }
        let p = mesh.corners(t);
        let e = ElementGeometry::new(p);
        let u = tri.map(|v| state.values[v]);
        let w = tri.map(|v| adjoint.values[v]);
        let g = e.gradient(u);
        let q = e.gradient(w);
        let s = g[0].hypot(g[1]);
        let (nu, dnu) = materials.eval(mesh.regions()[t], s);
        let j = source.density(mesh.regions()[t]);
        let gq = g[0] * q[0] + g[1] * q[1];
        let psum = w[0] + w[1] + w[2];
        let d = e.d;
        for c in 0..3 {
            if !movable[tri[c]] {
                continue;
            }
            let (next, prev) = ((c + 1) % 3, (c + 2) % 3);
            let dd = perp(sub(p[next], p[prev]));
            for i in 0..2 {
                let mut unit = [0.0; 2];
                unit[i] = 1.0;
                let pe = perp(unit);
                let dm_u = [(u[prev] - u[next]) * pe[0], (u[prev] - u[next]) * pe[1]];
                let dm_p = [(w[prev] - w[next]) * pe[0], (w[prev] - w[next]) * pe[1]];
                let dg = [(dm_u[0] - g[0] * dd[i]) / d, (dm_u[1] - g[1] * dd[i]) / d];
                let dq = [(dm_p[0] - q[0] * dd[i]) / d, (dm_p[1] - q[1] * dd[i]) / d];
                let g_dg = g[0] * dg[0] + g[1] * dg[1];
                let dgq = dg[0] * q[0] + dg[1] * q[1] + g[0] * dq[0] + g[1] * dq[1];
                out[tri[c]][i] += 0.5 * dd[i] * nu * gq + 0.5 * d * (dnu * g_dg * gq + nu * dgq) - j * psum * dd[i] / 6.0;
            }
        }
    }
    out
}

/// Adjoint-based gradient of `J1` for a converged state. `factor` may be
/// passed to reuse a tangent factorization at `state`.
pub fn torque_gradient(
    space: &StateSpace,
    mesh: &Mesh,
    state: &NodalField,
    materials: &ReluctivityModel,
    source: &CurrentExcitation,
    params: &ObjectiveParams,
) -> Result<(ShapeGradient, NodalField), ObjectiveError> {
    let rhs = torque_state_derivative(mesh, state, params, materials.nu0)?;
    let adjoint = space.solve_adjoint(mesh, state, materials, &rhs)?;
    // Movable vertices never touch the gap ring, so J1 has no explicit
    // dependence on them.
    debug_assert!((0..mesh.num_triangles())
        .filter(|&t| mesh.regions()[t] == Region::GapRing)
        .all(|t| mesh.triangles()[t].iter().all(|&v| !mesh.movable()[v])));
    let g = residual_shape_derivative(mesh, state, &adjoint, materials, source);
    Ok((ShapeGradient { objective: Objective::J1, per_vertex: g }, adjoint))
}

/// Gradient of `objective` at a converged `state`.
pub fn shape_gradient(
    space: &StateSpace,
    mesh: &Mesh,
    materials: &ReluctivityModel,
    source: &CurrentExcitation,
    params: &ObjectiveParams,
    objective: Objective,
    state: &NodalField,
) -> Result<ShapeGradient, ObjectiveError> {
    match objective {
        Objective::J1 => Ok(torque_gradient(space, mesh, state, materials, source, params)?.0),
        Objective::J2 => Ok(volume_gradient(mesh, params.axial_length)),
    }
}

/// Fails if `state` does not satisfy the state equation to `tol`.
pub fn check_converged(
    space: &StateSpace,
    mesh: &Mesh,
    state: &NodalField,
    materials: &ReluctivityModel,
    source: &CurrentExcitation,
    tol: f64,
) -> Result<(), ObjectiveError> {
    let r = space.assemble_residual(mesh, state, materials, source)?;
    let f = space.load_vector(mesh, source);
    let (rn, fnorm) = (crate::linalg::norm2(&r), crate::linalg::norm2(&f));
    if rn > tol * fnorm.max(1.0) {
        return Err(FemError::NotConverged { iterations: 0, residual: rn }.into());
    }
    Ok(())
}

//! The rotor design problem: negative torque against iron volume, with the
//! state equation solved on every design.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use faer::Mat;
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{CorrectorError, ProblemError};
use crate::fem::{CurrentExcitation, ExcitationParams, NodalField, ReluctivityModel, StateSpace};
use crate::homotopy::{self, Corrected, DescentRun, HomotopyConfig, Linearization, PathProblem, Termination};
use crate::mesh::{build_reference_geometry, GeometryParams, Mesh, Region};
use crate::objectives::{torque_arkkio, torque_gradient, volume, volume_gradient, ObjectiveParams};
use crate::shape::{DesignSpace, ExtensionKind, ShapeFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Relative residual target of the state Newton solve.
    pub state_tol: f64,
    pub max_newton: usize,
    /// Hessian difference step relative to the local interface edge length.
    pub fd_rel_step: f64,
    /// Largest normal move per step as a fraction of the local edge length.
    pub max_move: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { state_tol: 1e-12, max_newton: 50, fd_rel_step: 1e-6, max_move: 0.25 }
    }
}

/// Thresholds below which an accepted design ends the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthParams {
    pub min_angle_deg: f64,
    pub min_area_ratio: f64,
    /// Iron area relative to the initial one.
    pub min_iron_fraction: f64,
}

impl Default for HealthParams {
    fn default() -> Self {
        Self { min_angle_deg: 5.0, min_area_ratio: 1e-3, min_iron_fraction: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorConfig {
    pub geometry: GeometryParams,
    pub materials: ReluctivityModel,
    pub excitation: ExcitationParams,
    pub objectives: ObjectiveParams,
    pub extension: ExtensionKind,
    /// Interface vertices held fixed next to each rim junction.
    pub rim_pinned: usize,
    pub solver: SolverParams,
    pub health: HealthParams,
}

impl MotorConfig {
    /// Checks parameters that the individual builders cannot see together.
    pub fn validate(&self) -> Result<(), ProblemError> {
        self.geometry.validate()?;
        self.objectives.validate()?;
        let g = &self.geometry;
        if self.objectives.r1 != g.gap_inner_radius || self.objectives.r2 != g.gap_outer_radius {
            return Err(ProblemError::Other(format!(
                "objectives.r1/r2 ({}, {}) must equal geometry.gap_inner_radius/gap_outer_radius ({}, {})",
                self.objectives.r1, self.objectives.r2, g.gap_inner_radius, g.gap_outer_radius
            )));
        }
        if !(self.objectives.axial_length > 0.0) {
            return Err(ProblemError::Other(format!("axial_length must be positive, got {}", self.objectives.axial_length)));
        }
        let s = &self.solver;
        if !(s.state_tol > 0.0 && s.fd_rel_step > 0.0 && s.max_move > 0.0) || s.max_newton == 0 {
            return Err(ProblemError::Other("solver tolerances, steps and iteration limits must be positive".into()));
        }
        Ok(())
    }
}

impl Default for MotorConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryParams::default(),
            materials: ReluctivityModel::default(),
            excitation: ExcitationParams::default(),
            objectives: ObjectiveParams::default(),
            extension: ExtensionKind::default(),
            rim_pinned: 3,
            solver: SolverParams::default(),
            health: HealthParams::default(),
        }
    }
}

/// A rotor shape with its converged magnetic state.
#[derive(Debug, Clone)]
pub struct MotorDesign {
    pub mesh: Arc<Mesh>,
    pub state: Arc<NodalField>,
}

pub struct MotorProblem {
    pub config: MotorConfig,
    pub source: CurrentExcitation,
    state_space: StateSpace,
    design_space: Arc<DesignSpace>,
    initial_iron: f64,
    solves: AtomicUsize,
}

impl MotorProblem {
    /// Problem and initial design on the reference geometry.
    pub fn new(config: MotorConfig) -> Result<(Self, MotorDesign), ProblemError> {
        let mesh = build_reference_geometry(&config.geometry)?;
        Self::on_mesh(config, mesh)
    }

    /// Problem and design on a given mesh with the reference topology.
    pub fn on_mesh(config: MotorConfig, mesh: Mesh) -> Result<(Self, MotorDesign), ProblemError> {
        config.validate()?;
        let source = CurrentExcitation::from_mesh(&config.excitation, &mesh);
        let state_space = StateSpace::new(&mesh)?;
        let design_space = Arc::new(DesignSpace::new(&mesh, config.extension, config.rim_pinned)?);
        let problem = Self {
            source,
            state_space,
            design_space,
            initial_iron: mesh.region_area(Region::Iron),
            solves: AtomicUsize::new(0),
            config,
        };
        let state = problem.solve(&mesh, &NodalField::zeros(&mesh))?;
        Ok((problem, MotorDesign { mesh: Arc::new(mesh), state: Arc::new(state) }))
    }

    /// Design on `mesh` with the state solved from the warm start `initial`.
    pub fn design_on(&self, mesh: Mesh, initial: &NodalField) -> Result<MotorDesign, ProblemError> {
        let state = self.solve(&mesh, initial)?;
        Ok(MotorDesign { mesh: Arc::new(mesh), state: Arc::new(state) })
    }

    pub fn design_space(&self) -> &Arc<DesignSpace> {
        &self.design_space
    }

    fn solve(&self, mesh: &Mesh, initial: &NodalField) -> Result<NodalField, ProblemError> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let s = &self.config.solver;
        Ok(self.state_space.solve_state(mesh, &self.config.materials, &self.source, initial, s.state_tol, s.max_newton)?.field)
    }

    /// Per-vertex gradients of both objectives.
    pub fn full_gradients(&self, design: &MotorDesign) -> Result<[Vec<[f64; 2]>; 2], ProblemError> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let (g1, _) = torque_gradient(&self.state_space, &design.mesh, &design.state, &self.config.materials, &self.source, &self.config.objectives)?;
        let g2 = volume_gradient(&design.mesh, self.config.objectives.axial_length);
        Ok([g1.per_vertex, g2.per_vertex])
    }

    /// Flux density magnitude per triangle.
    pub fn flux_density(&self, design: &MotorDesign) -> Vec<f64> {
        design.state.flux_density(&design.mesh)
    }
}

impl PathProblem for MotorProblem {
    type Design = MotorDesign;
    type Frame = ShapeFrame;

    fn frame(&self, design: &MotorDesign) -> Result<ShapeFrame, ProblemError> {
        Ok(self.design_space.frame(&design.mesh)?)
    }

    fn linearize(&self, design: &MotorDesign, frame: &ShapeFrame) -> Result<Linearization, ProblemError> {
        let [g1, g2] = self.full_gradients(design)?;
        Ok(Linearization { values: self.values(design)?, gradients: [frame.reduce(&g1), frame.reduce(&g2)] })
    }

    fn values(&self, design: &MotorDesign) -> Result<[f64; 2], ProblemError> {
        let p = &self.config.objectives;
        Ok([torque_arkkio(&design.mesh, &design.state, p, self.config.materials.nu0)?, volume(&design.mesh, p.axial_length)])
    }

    fn displace(&self, design: &MotorDesign, frame: &ShapeFrame, alpha: &[f64]) -> Result<MotorDesign, ProblemError> {
        let v = frame.extend(alpha, design.mesh.num_vertices());
        let mesh = design.mesh.apply_deformation(&v, 1.0)?;
        let state = self.solve(&mesh, &design.state)?;
        Ok(MotorDesign { mesh: Arc::new(mesh), state: Arc::new(state) })
    }

    fn fd_steps(&self, frame: &ShapeFrame, _: usize) -> Vec<f64> {
        frame.lumped.iter().map(|l| self.config.solver.fd_rel_step * l).collect()
    }

    fn metric(&self, design: &MotorDesign, frame: &ShapeFrame, _: usize) -> Result<Mat<f64>, ProblemError> {
        Ok(frame.metric(design.mesh.num_vertices()))
    }

    fn step_limit(&self, frame: &ShapeFrame, alpha: &[f64]) -> f64 {
        let cap = self.config.solver.max_move;
        alpha.iter().zip(&frame.lumped).filter(|(a, _)| **a != 0.0).map(|(a, l)| cap * l / a.abs()).fold(f64::INFINITY, f64::min)
    }

    fn check(&self, design: &MotorDesign) -> Option<Termination> {
        let h = &self.config.health;
        if design.mesh.region_area(Region::Iron) < h.min_iron_fraction * self.initial_iron {
            return Some(Termination::TopologyDegenerate);
        }
        let q = design.mesh.quality();
        if q.inverted_count > 0 || q.min_angle < h.min_angle_deg || q.min_area_ratio < h.min_area_ratio {
            return Some(Termination::MeshQuality);
        }
        None
    }

    fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

/// Outcome of [`refine_and_reoptimize`].
#[derive(Debug, Clone)]
pub struct Refined {
    pub descent: DescentRun<MotorDesign>,
    pub corrected: Corrected<MotorDesign>,
    pub coarse_values: [f64; 2],
}

impl Refined {
    pub fn values(&self) -> [f64; 2] {
        self.corrected.linearization.values
    }

    /// Largest relative change of an objective against the coarse design.
    pub fn drift(&self) -> f64 {
        let v = self.values();
        (0..2).map(|k| ((v[k] - self.coarse_values[k]) / self.coarse_values[k]).abs()).fold(0.0, f64::max)
    }
}

/// Refines `design` uniformly `levels` times and re-solves `H(., t) = 0` on
/// the fine mesh by gradient descent followed by the Newton corrector.
pub fn refine_and_reoptimize(
    problem: &MotorProblem,
    design: &MotorDesign,
    t: f64,
    levels: usize,
    homotopy: &HomotopyConfig,
) -> Result<(MotorProblem, Refined), CorrectorError> {
    let coarse_values = problem.values(design)?;
    let mut mesh = (*design.mesh).clone();
    for _ in 0..levels {
        mesh = mesh.uniform_refine();
    }
    // Each refinement halves the interface edges. Pinning only the same
    // stretch would free the new midpoint next to it, and that lone vertex
    // can fold a sharp corner into the junction (negative curvature at mesh
    // scale). Pin through the next coarse vertex instead.
    let mut config = problem.config.clone();
    if levels > 0 {
        config.rim_pinned = (config.rim_pinned + 1) << levels;
    }
    let (fine_problem, fine) = MotorProblem::on_mesh(config, mesh)?;
    let init = homotopy::initialize(&fine_problem, fine, t, homotopy)?;
    let v = init.corrected.linearization.values;
    info!("refined {levels} level(s) at t={t}: J1 {:.6e} -> {:.6e}, J2 {:.6e} -> {:.6e}", coarse_values[0], v[0], coarse_values[1], v[1]);
    Ok((fine_problem, Refined { descent: init.descent, corrected: init.corrected, coarse_values }))
}

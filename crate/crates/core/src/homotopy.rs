//! Predictor-corrector tracing of the convex homotopy
//! `H(x, t) = (1 - t) dJ1(x) + t dJ2(x)` between two optimality conditions.
//!
//! The engine is generic over [`PathProblem`]: a design space with a local
//! chart ("frame") in which displacements are vectors of reals.

use std::time::Instant;

use faer::Mat;
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CorrectorError, ProblemError};
use crate::linalg::{dot, norm2, spd_solve};
use crate::shape::{regularize, ShapeHessian};

/// Objective values and gradients of both objectives at one design,
/// expressed in the design's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub values: [f64; 2],
    pub gradients: [Vec<f64>; 2],
}

impl Linearization {
    /// `(1 - t) w1 g1 + t w2 g2`.
    pub fn blended(&self, t: f64, weights: [f64; 2]) -> Vec<f64> {
        let (a, b) = ((1.0 - t) * weights[0], t * weights[1]);
        self.gradients[0].iter().zip(&self.gradients[1]).map(|(g1, g2)| a * g1 + b * g2).collect()
    }
}

/// Why a trace stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    ReachedT1,
    DtUnderflow,
    MeshQuality,
    TopologyDegenerate,
    MaxPoints,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::ReachedT1 => "REACHED_T1",
            Termination::DtUnderflow => "DT_UNDERFLOW",
            Termination::MeshQuality => "MESH_QUALITY",
            Termination::TopologyDegenerate => "TOPOLOGY_DEGENERATE",
            Termination::MaxPoints => "MAX_POINTS",
        };
        f.write_str(s)
    }
}

/// A bi-objective design problem the tracer can follow.
pub trait PathProblem: Sync {
    type Design: Clone + Send + Sync;
    type Frame: Sync;

    /// Local chart at `design`.
    fn frame(&self, design: &Self::Design) -> Result<Self::Frame, ProblemError>;

    /// Objective values and gradients with respect to the frame coordinates.
    fn linearize(&self, design: &Self::Design, frame: &Self::Frame) -> Result<Linearization, ProblemError>;

    /// Objective values only.
    fn values(&self, design: &Self::Design) -> Result<[f64; 2], ProblemError>;

    /// The design reached by moving `alpha` in the chart of `design`.
    fn displace(&self, design: &Self::Design, frame: &Self::Frame, alpha: &[f64]) -> Result<Self::Design, ProblemError>;

    /// Finite-difference step for each frame coordinate.
    fn fd_steps(&self, frame: &Self::Frame, dim: usize) -> Vec<f64> {
        let _ = frame;
        vec![1e-6; dim]
    }

    /// Hessians of both objectives in the frame. The default differences
    /// the gradients along each coordinate.
    fn hessians(&self, design: &Self::Design, frame: &Self::Frame, base: &Linearization) -> Result<[Mat<f64>; 2], ProblemError> {
        fd_hessians(self, design, frame, base)
    }

    /// Inner product on frame coordinates for gradient descent.
    fn metric(&self, design: &Self::Design, frame: &Self::Frame, dim: usize) -> Result<Mat<f64>, ProblemError> {
        let _ = (design, frame);
        Ok(Mat::identity(dim, dim))
    }

    /// Largest admissible multiple of `alpha` for one step.
    fn step_limit(&self, frame: &Self::Frame, alpha: &[f64]) -> f64 {
        let _ = (frame, alpha);
        f64::INFINITY
    }

    /// Reason to stop tracing at an accepted design, if any.
    fn check(&self, design: &Self::Design) -> Option<Termination> {
        let _ = design;
        None
    }

    /// Number of PDE solves performed so far.
    fn solves(&self) -> usize {
        0
    }
}

/// Forward differences of both gradients, one column per coordinate. Columns
/// are independent and evaluated in parallel on the current rayon pool.
pub fn fd_hessians<P: PathProblem + ?Sized>(
    problem: &P,
    design: &P::Design,
    frame: &P::Frame,
    base: &Linearization,
) -> Result<[Mat<f64>; 2], ProblemError> {
    let n = base.gradients[0].len();
    let steps = problem.fd_steps(frame, n);
    let columns: Vec<Result<[Vec<f64>; 2], ProblemError>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut alpha = vec![0.0; n];
            alpha[j] = steps[j];
            let moved = problem
                .displace(design, frame, &alpha)
                .map_err(|e| ProblemError::HessianColumn { column: j, reason: e.to_string() })?;
            // The residual is always expressed in the design's own frame,
            // so the perturbed gradient is too.
            let lin = problem
                .frame(&moved)
                .and_then(|f| problem.linearize(&moved, &f))
                .map_err(|e| ProblemError::HessianColumn { column: j, reason: e.to_string() })?;
            let col = |k: usize| -> Vec<f64> {
                lin.gradients[k].iter().zip(&base.gradients[k]).map(|(a, b)| (a - b) / steps[j]).collect()
            };
            Ok([col(0), col(1)])
        })
        .collect();
    let mut h = [Mat::zeros(n, n), Mat::zeros(n, n)];
    for (j, c) in columns.into_iter().enumerate() {
        let c = c?;
        for k in 0..2 {
            for i in 0..n {
                h[k][(i, j)] = c[k][i];
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    #[default]
    Warm,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomotopyConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub grow: f64,
    pub shrink: f64,
    /// Corrector iteration count at or below which the step grows.
    pub n_fast: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub predictor: Predictor,
    pub max_points: usize,
    /// Keep `dt` at `dt_init` on success.
    pub fixed_step: bool,
    /// Objective scaling `(w1, w2)` in the homotopy.
    pub weights: [f64; 2],
    pub gd_tol: f64,
    pub gd_max_iter: usize,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_min: 1e-9,
            dt_max: 0.2,
            grow: 1.5,
            shrink: 0.5,
            n_fast: 3,
            tol: 1e-10,
            max_iter: 20,
            predictor: Predictor::Warm,
            max_points: 200,
            fixed_step: false,
            weights: [1.0, 1.0],
            gd_tol: 1e-4,
            gd_max_iter: 2000,
        }
    }
}

impl HomotopyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(format!("need 0 < dt_min <= dt_init <= dt_max, got {} {} {}", self.dt_min, self.dt_init, self.dt_max));
        }
        if !(self.grow > 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(format!("need grow > 1 and 0 < shrink < 1, got {} and {}", self.grow, self.shrink));
        }
        if !(self.tol > 0.0) || !(self.gd_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err("objective weights must be positive".into());
        }
        Ok(())
    }
}

/// Result of a successful corrector run.
#[derive(Debug, Clone)]
pub struct Corrected<D> {
    pub design: D,
    pub linearization: Linearization,
    /// Residual norm before each iteration and after the last.
    pub history: Vec<f64>,
    /// Objective Hessians from the last Newton iteration.
    pub hessians: Option<[Mat<f64>; 2]>,
}

impl<D> Corrected<D> {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }

    pub fn residual(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

/// `H(design, t)` in the design's own frame.
pub fn homotopy_residual<P: PathProblem>(problem: &P, design: &P::Design, t: f64, weights: [f64; 2]) -> Result<Vec<f64>, ProblemError> {
    let frame = problem.frame(design)?;
    Ok(problem.linearize(design, &frame)?.blended(t, weights))
}

/// Blended, regularized Hessian.
fn blended_hessian(h: &[Mat<f64>; 2], t: f64, w: [f64; 2]) -> ShapeHessian {
    let n = h[0].nrows();
    let raw = Mat::from_fn(n, n, |i, j| (1.0 - t) * w[0] * h[0][(i, j)] + t * w[1] * h[1][(i, j)]);
    regularize(&raw)
}

fn is_mesh_failure(e: &ProblemError) -> bool {
    matches!(e, ProblemError::Mesh(_)) || matches!(e, ProblemError::Objective(crate::error::ObjectiveError::Mesh(_)))
}

/// Failures that a shorter step may avoid.
fn is_recoverable(e: &ProblemError) -> bool {
    use crate::error::{FemError, ObjectiveError};
    let fem = |f: &FemError| matches!(f, FemError::NotConverged { .. } | FemError::Singular);
    is_mesh_failure(e)
        || matches!(e, ProblemError::OutOfDomain(_))
        || matches!(e, ProblemError::Fem(f) if fem(f))
        || matches!(e, ProblemError::Objective(ObjectiveError::Fem(f)) if fem(f))
}

/// Shape-Newton corrector for `H(., t) = 0`. Each iteration freezes the frame
/// at the current design, solves `H alpha = -g` with the regularized
/// finite-difference Hessian and backtracks on the residual norm measured
/// in the frame of the trial design.
pub fn newton_correct<P: PathProblem>(
    problem: &P,
    design: P::Design,
    t: f64,
    config: &HomotopyConfig,
) -> Result<Corrected<P::Design>, CorrectorError> {
    let w = config.weights;
    let mut design = design;
    let mut frame = problem.frame(&design)?;
    let mut lin = problem.linearize(&design, &frame)?;
    let mut g = lin.blended(t, w);
    let mut history = vec![norm2(&g)];
    let mut hessians = None;
    for iter in 0..config.max_iter {
        let r = *history.last().unwrap();
        if r <= config.tol {
            break;
        }
        let h = problem.hessians(&design, &frame, &lin)?;
        let hb = blended_hessian(&h, t, w);
        hessians = Some(h);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let alpha = spd_solve(&hb.matrix, &rhs).ok_or_else(|| CorrectorError::Hessian("shifted Hessian is not positive definite".into()))?;
        let mut s = problem.step_limit(&frame, &alpha).min(1.0);
        let mut accepted = None;
        let mut mesh_failure = false;
        while s >= 1.0 / 1024.0 {
            let trial_alpha: Vec<f64> = alpha.iter().map(|a| s * a).collect();
            let trial = problem.displace(&design, &frame, &trial_alpha).and_then(|d| {
                let f = problem.frame(&d)?;
                let l = problem.linearize(&d, &f)?;
                Ok((d, f, l))
            });
            match trial {
                Ok((d, f, l)) => {
                    let gt = l.blended(t, w);
                    let rt = norm2(&gt);
                    if rt <= (1.0 - 1e-4 * s) * r {
                        accepted = Some((d, f, l, gt, rt));
                        break;
                    }
                }
                Err(e) if is_mesh_failure(&e) => mesh_failure = true,
                Err(e) if is_recoverable(&e) => {}
                Err(e) => return Err(e.into()),
            }
            s *= 0.5;
        }
        let Some((d, f, l, gt, rt)) = accepted else {
            let reason = if mesh_failure { "deformation inverts the mesh" } else { "line search stalled" };
            debug!("t={t:.12} corrector iter={} rejected: {reason}", iter + 1);
            return Err(CorrectorError::StepRejected { reason: reason.into(), mesh: mesh_failure, history });
        };
        info!("t={t:.12} iter={} |g|={rt:.3e} step={s} mu={:.3e}", iter + 1, hb.shift);
        design = d;
        frame = f;
        lin = l;
        g = gt;
        history.push(rt);
    }
    if *history.last().unwrap() > config.tol {
        return Err(CorrectorError::NonConverged { history });
    }
    Ok(Corrected { design, linearization: lin, history, hessians })
}

/// Record of a gradient descent run.
#[derive(Debug, Clone)]
pub struct DescentRun<D> {
    pub design: D,
    pub linearization: Linearization,
    /// Blended objective after each accepted step.
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Gradient descent on `(1 - t) w1 J1 + t w2 J2` using the problem's metric
/// and an Armijo backtracking line search.
pub fn gradient_descent<P: PathProblem>(
    problem: &P,
    design: P::Design,
    t: f64,
    config: &HomotopyConfig,
) -> Result<DescentRun<P::Design>, ProblemError> {
    let w = config.weights;
    let blend = |v: [f64; 2]| (1.0 - t) * w[0] * v[0] + t * w[1] * v[1];
    let mut design = design;
    let mut frame = problem.frame(&design)?;
    let mut lin = problem.linearize(&design, &frame)?;
    let mut g = lin.blended(t, w);
    let mut value = blend(lin.values);
    let mut values = vec![value];
    let mut residuals = vec![norm2(&g)];
    let mut last_step = 1.0f64;
    for iter in 0..config.gd_max_iter {
        let r = *residuals.last().unwrap();
        if r <= config.gd_tol {
            break;
        }
        let metric = problem.metric(&design, &frame, g.len())?;
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let alpha = spd_solve(&metric, &rhs).ok_or_else(|| ProblemError::Other("descent metric is not positive definite".into()))?;
        let slope = dot(&g, &alpha);
        let limit = problem.step_limit(&frame, &alpha).min(1.0);
        let mut s = (2.0 * last_step).min(limit);
        let mut accepted = None;
        while s > 1e-14 * limit {
            let trial_alpha: Vec<f64> = alpha.iter().map(|a| s * a).collect();
            match problem.displace(&design, &frame, &trial_alpha) {
                Ok(d) => {
                    let v = blend(problem.values(&d)?);
                    if v <= value + 1e-4 * s * slope {
                        accepted = Some((d, v));
                        break;
                    }
                }
                Err(e) if is_recoverable(&e) => {}
                Err(e) => return Err(e),
            }
            s *= 0.5;
        }
        let Some((d, v)) = accepted else {
            info!("gradient descent: step underflow after {iter} iterations at |g|={r:.3e}");
            break;
        };
        last_step = s;
        design = d;
        frame = problem.frame(&design)?;
        lin = problem.linearize(&design, &frame)?;
        g = lin.blended(t, w);
        value = v;
        values.push(v);
        residuals.push(norm2(&g));
        debug!("gd iter={} J={v:.10e} |g|={:.3e} step={s:.3e}", iter + 1, residuals.last().unwrap());
    }
    Ok(DescentRun { design, linearization: lin, values, residuals })
}

/// Outcome of the initialization at `t`.
#[derive(Debug, Clone)]
pub struct Initialized<D> {
    pub descent: DescentRun<D>,
    pub corrected: Corrected<D>,
}

/// Gradient descent to `gd_tol` followed by the Newton corrector, both at `t`.
pub fn initialize<P: PathProblem>(problem: &P, design: P::Design, t: f64, config: &HomotopyConfig) -> Result<Initialized<P::Design>, CorrectorError> {
    let descent = gradient_descent(problem, design, t, config)?;
    let gd_residual = *descent.residuals.last().unwrap();
    info!("gradient descent: {} steps, residual {gd_residual:.3e}", descent.residuals.len() - 1);
    match newton_correct(problem, descent.design.clone(), t, config) {
        Ok(corrected) => Ok(Initialized { descent, corrected }),
        Err(e) => Err(CorrectorError::InitBasinMiss { gd_residual, source: Box::new(e) }),
    }
}

/// Initialization at `t = 0`.
pub fn initialize_t0<P: PathProblem>(problem: &P, design: P::Design, config: &HomotopyConfig) -> Result<Initialized<P::Design>, CorrectorError> {
    initialize(problem, design, 0.0, config)
}

/// Guess for the stationary design at `t + dt` from the one at `t`.
pub fn predict<P: PathProblem>(
    problem: &P,
    at: &Corrected<P::Design>,
    t: f64,
    dt: f64,
    mode: Predictor,
    weights: [f64; 2],
) -> P::Design {
    if dt == 0.0 || mode == Predictor::Warm {
        return at.design.clone();
    }
    let euler = || -> Result<P::Design, String> {
        let frame = problem.frame(&at.design).map_err(|e| e.to_string())?;
        let h = match &at.hessians {
            Some(h) => h.clone(),
            None => problem.hessians(&at.design, &frame, &at.linearization).map_err(|e| e.to_string())?,
        };
        let hb = blended_hessian(&h, t, weights);
        let g = &at.linearization.gradients;
        let rhs: Vec<f64> = g[1].iter().zip(&g[0]).map(|(b, a)| -(weights[1] * b - weights[0] * a) * dt).collect();
        let alpha = spd_solve(&hb.matrix, &rhs).ok_or("tangent system is not positive definite")?;
        let s = problem.step_limit(&frame, &alpha).min(1.0);
        let alpha: Vec<f64> = alpha.iter().map(|a| s * a).collect();
        problem.displace(&at.design, &frame, &alpha).map_err(|e| e.to_string())
    };
    match euler() {
        Ok(d) => d,
        Err(e) => {
            warn!("Euler predictor failed ({e}); using warm start");
            at.design.clone()
        }
    }
}

/// One accepted point of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: usize,
    pub t: f64,
    pub j1: f64,
    pub j2: f64,
    pub residual: f64,
    pub corrector_iters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ParetoTrace<D> {
    pub points: Vec<TracePoint>,
    pub designs: Vec<D>,
    pub histories: Vec<Vec<f64>>,
    pub termination: Termination,
    /// Final step size.
    pub dt: f64,
}

/// Traces the path from an initialized design at `t = 0`. `on_point` is
/// called for every accepted point, including the initial one.
pub fn trace<P: PathProblem>(
    problem: &P,
    start: Corrected<P::Design>,
    config: &HomotopyConfig,
    mut on_point: impl FnMut(&TracePoint, &P::Design),
) -> ParetoTrace<P::Design> {
    let clock = Instant::now();
    let mut points = Vec::new();
    let mut designs = Vec::new();
    let mut histories = Vec::new();
    let mut record = |c: &Corrected<P::Design>, t: f64, points: &mut Vec<TracePoint>, designs: &mut Vec<P::Design>| {
        let p = TracePoint {
            k: points.len(),
            t,
            j1: c.linearization.values[0],
            j2: c.linearization.values[1],
            residual: c.residual(),
            corrector_iters: c.iterations(),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        };
        info!("point {} t={:.12} J1={:.10e} J2={:.10e} |H|={:.3e} iters={}", p.k, p.t, p.j1, p.j2, p.residual, p.corrector_iters);
        on_point(&p, &c.design);
        points.push(p);
        designs.push(c.design.clone());
        histories.push(c.history.clone());
    };

    let mut t = 0.0;
    let mut current = start;
    record(&current, t, &mut points, &mut designs);
    let mut dt = config.dt_init;
    let termination = loop {
        if let Some(reason) = problem.check(&current.design) {
            break reason;
        }
        if t >= 1.0 {
            break Termination::ReachedT1;
        }
        if points.len() >= config.max_points {
            break Termination::MaxPoints;
        }
        let mut t_new = t + dt;
        if t_new > 1.0 - 1e-12 {
            t_new = 1.0;
        }
        let guess = predict(problem, &current, t, t_new - t, config.predictor, config.weights);
        match newton_correct(problem, guess, t_new, config) {
            Ok(c) => {
                let fast = c.iterations() <= config.n_fast;
                t = t_new;
                current = c;
                record(&current, t, &mut points, &mut designs);
                if fast && !config.fixed_step {
                    dt = (dt * config.grow).min(config.dt_max);
                }
            }
            Err(e) => {
                let mesh_failure = matches!(e, CorrectorError::StepRejected { mesh: true, .. });
                dt *= config.shrink;
                debug!("corrector failed at t={t_new:.12}: {e}; dt -> {dt:.3e}");
                if dt < config.dt_min {
                    break if mesh_failure { Termination::MeshQuality } else { Termination::DtUnderflow };
                }
            }
        }
    };
    info!("trace terminated: {termination} at t={t:.12} after {} points", points.len());
    ParetoTrace { points, designs, histories, termination, dt: dt.max(config.dt_min) }
}

//! End-to-end runs: initialization, tracing and optional refinement, with
//! all artifacts written under one output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! trace.csv            one row per accepted point, rewritten after each point
//! summary.json         termination, counts, refinement results, configuration
//! designs/point_K.mesh every accepted design, readable by `read_mesh`
//! vtk/point_K.vtk      snapshots every `output.snapshot_stride` points
//! ```

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::error::{ConfigError, CorrectorError, ProblemError};
use crate::homotopy::{self, HomotopyConfig, Initialized, ParetoTrace, PathProblem, Predictor};
use crate::mesh::{read_mesh, write_mesh};
use crate::motor::{refine_and_reoptimize, MotorDesign, MotorProblem};
use crate::output::{design_vtk, trace_csv, write_atomic};
use crate::surrogate::{nonconvex_front_problem, quad_pair_problem, surrogate_config, SurrogateId};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    write_atomic(path, bytes).map_err(io_err(path))
}

pub fn design_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("designs").join(format!("point_{k:04}.mesh"))
}

fn vtk_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("vtk").join(format!("point_{k:04}.vtk"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitSummary {
    pub gd_steps: usize,
    pub gd_residual: f64,
    pub corrector_history: Vec<f64>,
}

impl InitSummary {
    fn new<D>(init: &Initialized<D>) -> Self {
        Self {
            gd_steps: init.descent.residuals.len() - 1,
            gd_residual: *init.descent.residuals.last().unwrap(),
            corrector_history: init.corrected.history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSummary {
    pub point: usize,
    pub t: f64,
    pub levels: usize,
    pub coarse: [f64; 2],
    pub fine: Option<[f64; 2]>,
    /// Largest relative change of an objective.
    pub drift: Option<f64>,
    pub residual: Option<f64>,
    pub gd_steps: Option<usize>,
    pub corrector_history: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub termination: String,
    pub final_t: f64,
    pub points: usize,
    pub pde_solves: usize,
    pub wall_time_s: f64,
    pub initialization: InitSummary,
    pub refined: Vec<RefineSummary>,
    pub config: RunConfig,
}

pub struct MotorRun {
    pub problem: MotorProblem,
    pub initialized: Initialized<MotorDesign>,
    pub trace: ParetoTrace<MotorDesign>,
    pub summary: RunSummary,
}

/// Runs the motor problem described by `config`. With `out` set, artifacts
/// are written as the trace proceeds, so an interrupted run leaves a
/// consistent prefix behind.
pub fn run_motor(config: &RunConfig, out: Option<&Path>) -> Result<MotorRun, RunError> {
    config.validate()?;
    let clock = Instant::now();
    if let Some(dir) = out {
        create_dir(&dir.join("designs"))?;
        create_dir(&dir.join("vtk"))?;
    }
    let (problem, design) = MotorProblem::new(config.motor())?;
    info!("reference design: {} triangles, {} design variables", design.mesh.num_triangles(), problem.design_space().dim());
    let initialized = homotopy::initialize_t0(&problem, design, &config.homotopy)?;

    let mut points = Vec::new();
    let mut io_error = None;
    let trace = homotopy::trace(&problem, initialized.corrected.clone(), &config.homotopy, |p, d| {
        points.push(p.clone());
        let Some(dir) = out else { return };
        if io_error.is_some() {
            return;
        }
        let result = (|| {
            let mut mesh = Vec::new();
            write_mesh(&d.mesh, &mut mesh).map_err(io_err(dir))?;
            write_file(&design_path(dir, p.k), &mesh)?;
            if p.k % config.output.snapshot_stride == 0 {
                write_file(&vtk_path(dir, p.k), &design_vtk(&problem, d))?;
            }
            write_file(&dir.join("trace.csv"), trace_csv(&points, config.output.wall_time).as_bytes())
        })();
        if let Err(e) = result {
            io_error = Some(e);
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }

    let mut refined = Vec::new();
    for &k in &config.refine.points {
        refined.push(refine_point(&problem, &trace, k, config.refine.levels, &config.homotopy));
    }

    let summary = RunSummary {
        termination: trace.termination.to_string(),
        final_t: trace.points.last().map_or(0.0, |p| p.t),
        points: trace.points.len(),
        pde_solves: problem.solves(),
        wall_time_s: clock.elapsed().as_secs_f64(),
        initialization: InitSummary::new(&initialized),
        refined,
        config: config.clone(),
    };
    if let Some(dir) = out {
        write_summary(dir, &summary)?;
    }
    Ok(MotorRun { problem, initialized, trace, summary })
}

fn write_summary<T: Serialize>(dir: &Path, summary: &T) -> Result<(), RunError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), json.as_bytes())
}

fn refine_point(problem: &MotorProblem, trace: &ParetoTrace<MotorDesign>, k: usize, levels: usize, homotopy: &HomotopyConfig) -> RefineSummary {
    let Some(point) = trace.points.get(k) else {
        return RefineSummary::failed(k, f64::NAN, levels, [f64::NAN; 2], format!("trace has no point {k}"));
    };
    refine_design(problem, &trace.designs[k], k, point.t, levels, homotopy)
}

fn refine_design(problem: &MotorProblem, design: &MotorDesign, k: usize, t: f64, levels: usize, homotopy: &HomotopyConfig) -> RefineSummary {
    let coarse = problem.values(design).unwrap_or([f64::NAN; 2]);
    match refine_and_reoptimize(problem, design, t, levels, homotopy) {
        Ok((_, r)) => RefineSummary {
            point: k,
            t,
            levels,
            coarse: r.coarse_values,
            fine: Some(r.values()),
            drift: Some(r.drift()),
            residual: Some(r.corrected.residual()),
            gd_steps: Some(r.descent.residuals.len() - 1),
            corrector_history: r.corrected.history.clone(),
            error: None,
        },
        Err(e) => {
            warn!("refinement of point {k} failed: {e}");
            RefineSummary::failed(k, t, levels, coarse, e.to_string())
        }
    }
}

impl RefineSummary {
    fn failed(point: usize, t: f64, levels: usize, coarse: [f64; 2], error: String) -> Self {
        Self { point, t, levels, coarse, fine: None, drift: None, residual: None, gd_steps: None, corrector_history: Vec::new(), error: Some(error) }
    }
}

/// Re-optimizes point `k` of a finished run in `dir` on a mesh refined
/// `levels` times. Appends the result to `dir/refine.json`.
pub fn refine_from_dir(config: &RunConfig, dir: &Path, k: usize, levels: usize) -> Result<RefineSummary, RunError> {
    config.validate()?;
    let trace_path = dir.join("trace.csv");
    let text = std::fs::read_to_string(&trace_path).map_err(io_err(&trace_path))?;
    let points = crate::output::parse_trace_csv(&text).map_err(|msg| ConfigError::Parse(format!("{}: {msg}", trace_path.display())))?;
    let point = points
        .iter()
        .find(|p| p.k == k)
        .ok_or_else(|| ConfigError::Invalid { field: "point".into(), msg: format!("{} has no point {k}", trace_path.display()) })?;
    let path = design_path(dir, k);
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let mesh = read_mesh(BufReader::new(file)).map_err(ProblemError::from)?;
    let (problem, design) = MotorProblem::on_mesh(config.motor(), mesh)?;
    let summary = refine_design(&problem, &design, k, point.t, levels, &config.homotopy);

    let log_path = dir.join("refine.json");
    let mut all: Vec<serde_json::Value> = match std::fs::read_to_string(&log_path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    all.push(serde_json::to_value(&summary).expect("summary serializes"));
    write_file(&log_path, serde_json::to_string_pretty(&all).expect("json").as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    /// Two quadratics with a straight stationary path, traced at fixed `dt = 0.1`.
    Quad,
    /// Nonconvex front, traced with adaptive steps. The stationary path
    /// folds back before `t = 1`, so the trace ends in a step underflow.
    Nonconvex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub problem: SurrogateId,
    pub termination: String,
    pub final_t: f64,
    pub points: usize,
    pub max_residual: f64,
}

/// Traces a closed-form surrogate and writes `trace.csv` and `summary.json`.
pub fn run_bench(kind: BenchKind, predictor: Predictor, out: Option<&Path>) -> Result<(ParetoTrace<Vec<f64>>, BenchSummary), RunError> {
    let (problem, x0, config) = match kind {
        BenchKind::Quad => (
            quad_pair_problem(vec![0.0, 0.0], vec![1.0, 0.0]),
            vec![1.0, 1.0],
            HomotopyConfig { dt_init: 0.1, dt_max: 0.1, fixed_step: true, predictor, ..surrogate_config() },
        ),
        BenchKind::Nonconvex => (nonconvex_front_problem(), vec![0.3, 0.1], HomotopyConfig { predictor, ..surrogate_config() }),
    };
    let trace = problem.run(x0, &config)?;
    let summary = BenchSummary {
        problem: problem.id.clone(),
        termination: trace.termination.to_string(),
        final_t: trace.points.last().map_or(0.0, |p| p.t),
        points: trace.points.len(),
        max_residual: trace.points.iter().map(|p| p.residual).fold(0.0, f64::max),
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("trace.csv"), trace_csv(&trace.points, false).as_bytes())?;
        write_summary(dir, &summary)?;
    }
    Ok((trace, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homotopy::Termination;
    use crate::output::parse_trace_csv;

    #[test]
    fn quad_bench_writes_eleven_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (trace, summary) = run_bench(BenchKind::Quad, Predictor::Warm, Some(dir.path())).unwrap();
        assert_eq!(summary.termination, "REACHED_T1");
        let rows = parse_trace_csv(&std::fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
        assert_eq!(rows.len(), 11);
        assert_eq!(rows.len(), trace.points.len());
        for (k, r) in rows.iter().enumerate() {
            assert!((r.t - k as f64 / 10.0).abs() < 1e-12);
        }
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["points"], 11);
    }

    #[test]
    fn nonconvex_bench_stops_at_the_fold() {
        let (trace, summary) = run_bench(BenchKind::Nonconvex, Predictor::Euler, None).unwrap();
        assert_eq!(trace.termination, Termination::DtUnderflow);
        assert!(summary.final_t > 0.5 && summary.final_t < 1.0, "{}", summary.final_t);
        assert!(summary.max_residual <= 1e-12);
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut c = RunConfig::default();
        c.homotopy.dt_min = -1.0;
        assert!(matches!(run_motor(&c, Some(&out)), Err(RunError::Config(_))));
        assert!(!out.exists());
    }
}

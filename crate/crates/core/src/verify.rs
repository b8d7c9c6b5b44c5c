//! Self-checks run before a trace: material law, geometry and gradient
//! consistency of both objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ProblemError;
use crate::homotopy::PathProblem;
use crate::mesh::{build_reference_geometry, Mesh, Point};
use crate::motor::{MotorConfig, MotorDesign, MotorProblem};

/// Step sizes of the default Taylor test.
pub const TAYLOR_EPS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Lowest acceptable observed order of the Taylor remainder.
pub const TAYLOR_MIN_ORDER: f64 = 1.9;

/// Remainders `|J(X + eps V) - J(X) - eps dJ(V)|` and the observed orders
/// between consecutive step sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    pub eps: Vec<f64>,
    pub remainders: Vec<f64>,
    pub orders: Vec<f64>,
}

impl TaylorReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Random displacement of the movable vertices with components uniform in
/// `[-amplitude, amplitude]`.
pub fn random_direction(mesh: &Mesh, rng: &mut impl Rng, amplitude: f64) -> Vec<Point> {
    mesh.movable()
        .iter()
        .map(|&m| if m { [amplitude * rng.random_range(-1.0..1.0), amplitude * rng.random_range(-1.0..1.0)] } else { [0.0; 2] })
        .collect()
}

/// Taylor test of the shape gradient of objective `which` (0 or 1) along
/// `direction`. States on the moved meshes are warm-started from the base.
pub fn taylor_test(
    problem: &MotorProblem,
    design: &MotorDesign,
    which: usize,
    direction: &[Point],
    eps: &[f64],
) -> Result<TaylorReport, ProblemError> {
    let base = problem.values(design)?[which];
    let g = &problem.full_gradients(design)?[which];
    let slope: f64 = g.iter().zip(direction).map(|(g, v)| g[0] * v[0] + g[1] * v[1]).sum();
    let mut remainders = Vec::with_capacity(eps.len());
    for &e in eps {
        let mesh = design.mesh.apply_deformation(direction, e)?;
        let moved = problem.design_on(mesh, &design.state)?;
        remainders.push((problem.values(&moved)?[which] - base - e * slope).abs());
    }
    let orders = remainders.windows(2).zip(eps.windows(2)).map(|(r, e)| (r[0] / r[1]).ln() / (e[0] / e[1]).ln()).collect();
    Ok(TaylorReport { eps: eps.to_vec(), remainders, orders })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn push(&mut self, name: &str, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name: name.into(), passed, detail });
    }

    /// Plain-text table, one check per line.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        self.checks
            .iter()
            .map(|c| format!("{:<width$}  {}  {}\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail))
            .collect()
    }
}

/// Flux density up to which the iron law is sampled.
const LAW_SAMPLE_MAX: f64 = 3.0;
const LAW_SAMPLES: usize = 600;
/// Minimum angle the default mesh must reach.
const MIN_MESH_ANGLE: f64 = 20.0;

/// Runs the material, geometry and Taylor checks on `config`. Later checks
/// are skipped when the problem cannot be built.
pub fn validate(config: &MotorConfig, seed: u64) -> ValidationReport {
    let mut report = ValidationReport::default();
    report.push(
        "material monotonicity",
        config
            .materials
            .check_monotone(LAW_SAMPLE_MAX, LAW_SAMPLES)
            .map(|_| format!("H-B curve increasing on [0, {LAW_SAMPLE_MAX}] T"))
            .map_err(|e| e.to_string()),
    );
    let mesh = config.validate().map_err(|e| e.to_string()).and_then(|_| build_reference_geometry(&config.geometry).map_err(|e| e.to_string()));
    let mesh = match mesh {
        Ok(mesh) => {
            let q = mesh.quality();
            let detail = format!("{} triangles, min angle {:.1} deg", mesh.num_triangles(), q.min_angle);
            report.push("geometry", if q.min_angle >= MIN_MESH_ANGLE && q.inverted_count == 0 { Ok(detail) } else { Err(detail) });
            mesh
        }
        Err(e) => {
            report.push("geometry", Err(e));
            return report;
        }
    };
    if !report.passed() {
        return report;
    }
    let built = MotorProblem::on_mesh(config.clone(), mesh);
    let (problem, design) = match built {
        Ok(p) => p,
        Err(e) => {
            report.push("state solve", Err(e.to_string()));
            return report;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = random_direction(&design.mesh, &mut rng, config.geometry.mesh_size);
    for (which, name) in [(0, "taylor J1"), (1, "taylor J2")] {
        let result = taylor_test(&problem, &design, which, &direction, &TAYLOR_EPS).map_err(|e| e.to_string()).and_then(|r| {
            let detail = format!("orders {:?}", r.orders.iter().map(|o| (o * 100.0).round() / 100.0).collect::<Vec<_>>());
            if r.min_order() >= TAYLOR_MIN_ORDER {
                Ok(detail)
            } else {
                Err(detail)
            }
        });
        report.push(name, result);
    }
    report
}

use criterion::{criterion_group, criterion_main, Criterion};
use shapetrace::fem::NodalField;
use shapetrace::homotopy::PathProblem;
use shapetrace::mesh::{build_reference_geometry, GeometryParams};
use shapetrace::motor::{MotorConfig, MotorProblem};
use shapetrace::surrogate::{nonconvex_front_problem, surrogate_config};

/// Coarser than the default so that one sample stays well under a second.
fn bench_config() -> MotorConfig {
    MotorConfig { geometry: GeometryParams { mesh_size: 4e-3, ..Default::default() }, ..Default::default() }
}

fn meshing(c: &mut Criterion) {
    let g = GeometryParams::default();
    c.bench_function("reference geometry (default mesh)", |b| b.iter(|| build_reference_geometry(&g).unwrap()));
}

fn state_solve(c: &mut Criterion) {
    let (problem, design) = MotorProblem::new(MotorConfig::default()).unwrap();
    let zero = NodalField::zeros(&design.mesh);
    c.bench_function("nonlinear state solve from zero (default mesh)", |b| {
        b.iter(|| problem.design_on((*design.mesh).clone(), &zero).unwrap())
    });
    c.bench_function("state solve warm-started at the solution", |b| b.iter(|| problem.design_on((*design.mesh).clone(), &design.state).unwrap()));
}

fn derivatives(c: &mut Criterion) {
    let (problem, design) = MotorProblem::new(bench_config()).unwrap();
    let frame = problem.frame(&design).unwrap();
    c.bench_function("objectives and reduced gradients (coarse mesh)", |b| b.iter(|| problem.linearize(&design, &frame).unwrap()));
    let base = problem.linearize(&design, &frame).unwrap();
    let mut group = c.benchmark_group("shape Hessian");
    group.sample_size(10);
    group.bench_function("finite-difference pair (coarse mesh)", |b| b.iter(|| problem.hessians(&design, &frame, &base).unwrap()));
    group.finish();
}

fn surrogate_trace(c: &mut Criterion) {
    let p = nonconvex_front_problem();
    let config = surrogate_config();
    c.bench_function("nonconvex surrogate trace", |b| b.iter(|| p.run(vec![0.3, 0.1], &config).unwrap()));
}

criterion_group!(benches, meshing, state_solve, derivatives, surrogate_trace);
criterion_main!(benches);

use std::path::Path;
use std::process::{Command, Output};

fn shapetrace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapetrace")).args(args).current_dir(cwd).env_remove("PARETO_TRACE_THREADS").output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn quad_bench_writes_eleven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = shapetrace(&["run-bench", "quad", "--out", "bench"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench/trace.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,t,J1,J2,residual,corrector_iters,wall_ms");
    assert_eq!(rows.len(), 12);
    assert!(rows[11].starts_with("10,1,"), "{}", rows[11]);
    assert!(dir.path().join("bench/run.log").is_file());
    assert!(dir.path().join("bench/summary.json").is_file());
    let leftovers = std::fs::read_dir(dir.path().join("bench")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp")).count();
    assert_eq!(leftovers, 0);
}

#[test]
fn missing_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = shapetrace(&["run", "--config", "absent.toml", "--out", "out"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("absent.toml"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn malformed_config_names_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[homotopy]\ndt_init = 0.01\ndt_inti = 0.02\n").unwrap();
    let out = shapetrace(&["run", "--config", "c.toml", "--out", "out"], dir.path());
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("line 3") && err.contains("dt_inti"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = shapetrace(&["validate"], dir.path());
    let table = text(&out.stdout);
    assert!(out.status.success(), "{table}{}", text(&out.stderr));
    for name in ["material monotonicity", "geometry", "taylor J1", "taylor J2", "configuration"] {
        assert!(table.lines().any(|l| l.starts_with(name) && l.contains("PASS")), "{name} missing from\n{table}");
    }
}

#[test]
fn validate_reports_broken_material_law() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[materials.iron]\nlaw = \"brauer\"\nk1 = 1.0\nk2 = 1000.0\nk3 = -6.0\n").unwrap();
    let out = shapetrace(&["validate", "--config", "c.toml"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stdout).lines().any(|l| l.starts_with("material monotonicity") && l.contains("FAIL")));
}

#[test]
fn validate_reports_empty_gap_ring() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[geometry]\ngap_outer_radius = 0.0445\n\n[objectives]\nr2 = 0.0445\n").unwrap();
    let out = shapetrace(&["validate", "--config", "c.toml"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stdout).lines().any(|l| l.starts_with("geometry") && l.contains("FAIL")));
}

#[test]
fn short_runs_are_reproducible_and_refinable() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["run", "--out", out, "--max-points", "3", "--snapshot-stride", "2"];
    for out in ["a", "b"] {
        let o = shapetrace(&args(out), dir.path());
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/trace.csv"), read("b/trace.csv"));
    assert_eq!(text(&read("a/trace.csv")).lines().count(), 4);
    for f in ["designs/point_0000.mesh", "designs/point_0002.mesh", "vtk/point_0000.vtk", "vtk/point_0002.vtk", "run.log"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }
    assert!(!dir.path().join("a/vtk/point_0001.vtk").exists());
    let log = text(&read("a/run.log"));
    assert!(log.contains("iter=") && log.contains("mu="), "corrector iterations are not logged");

    let summary = text(&read("a/summary.json"));
    for key in ["\"termination\": \"MAX_POINTS\"", "\"final_t\"", "\"points\": 3", "\"pde_solves\"", "\"wall_time_s\"", "\"config\""] {
        assert!(summary.contains(key), "{key}");
    }

    let o = shapetrace(&["refine", "--out", "a", "--point", "0", "--levels", "1"], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("point 0 t=0 levels=1"));
    assert!(dir.path().join("a/refine.json").is_file());
}

//! `shapetrace`: traces the torque/volume Pareto front of the reluctance
//! rotor and writes the artifacts of each phase to an output directory.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, LevelFilter};
use shapetrace::config::RunConfig;
use shapetrace::homotopy::Predictor;
use shapetrace::run::{refine_from_dir, run_bench, run_motor, BenchKind};
use shapetrace::verify;

/// Environment variable capping the worker threads used for Hessian columns.
const THREADS_VAR: &str = "PARETO_TRACE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "shapetrace", version, about = "Pareto front tracing for a reluctance rotor by homotopy continuation")]
struct Cli {
    /// TOML configuration; defaults are used for everything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "X")]
    dt_init: Option<f64>,
    #[arg(long, global = true, value_enum)]
    predictor: Option<PredictorArg>,
    #[arg(long, global = true, value_name = "N")]
    max_points: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    snapshot_stride: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "info")]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Initialize at t = 0, trace the front and refine the configured points.
    Run,
    /// Trace a closed-form surrogate problem.
    RunBench {
        #[arg(value_enum)]
        problem: BenchArg,
    },
    /// Check the material law, the geometry and both shape gradients.
    Validate,
    /// Re-optimize one point of a finished run on a refined mesh.
    Refine {
        #[arg(long)]
        point: usize,
        #[arg(long, default_value_t = 1)]
        levels: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PredictorArg {
    Warm,
    Euler,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BenchArg {
    Quad,
    Nonconvex,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LogLevel {
    Info,
    Debug,
}

impl Cli {
    fn load_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.out {
            config.output.dir = dir.clone();
        }
        if let Some(dt) = self.dt_init {
            config.homotopy.dt_init = dt;
        }
        if let Some(p) = self.predictor {
            config.homotopy.predictor = p.into();
        }
        if let Some(n) = self.max_points {
            config.homotopy.max_points = n;
        }
        if let Some(n) = self.snapshot_stride {
            config.output.snapshot_stride = n;
        }
        Ok(config)
    }
}

impl From<PredictorArg> for Predictor {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Warm => Predictor::Warm,
            PredictorArg::Euler => Predictor::Euler,
        }
    }
}

/// Log sink writing every record to stderr and to a file.
#[derive(Clone)]
struct Tee(Arc<Mutex<File>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.0.lock().unwrap().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.lock().unwrap().flush()
    }
}

/// `run.log` in the output directory. Records go to a temporary file that
/// is renamed into place when the command finishes.
struct RunLog {
    file: Arc<Mutex<File>>,
    tmp: PathBuf,
    path: PathBuf,
}

impl RunLog {
    fn start(dir: &Path, level: LevelFilter) -> Result<Self> {
        let path = dir.join("run.log");
        let tmp = dir.join(format!(".run.log.{}.tmp", std::process::id()));
        let file = Arc::new(Mutex::new(File::create(&tmp).with_context(|| format!("{}", tmp.display()))?));
        env_logger::Builder::new()
            .filter_level(LevelFilter::Warn)
            .filter_module("shapetrace", level)
            .format_timestamp_millis()
            .target(env_logger::Target::Pipe(Box::new(Tee(file.clone()))))
            .init();
        Ok(Self { file, tmp, path })
    }

    fn finish(self) -> Result<()> {
        let f = self.file.lock().unwrap();
        f.sync_all()?;
        std::fs::rename(&self.tmp, &self.path).with_context(|| format!("{}", self.path.display()))
    }
}

fn stderr_logger(level: LevelFilter) {
    env_logger::Builder::new().filter_level(LevelFilter::Warn).filter_module("shapetrace", level).format_timestamp_millis().init();
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = value.trim().parse().with_context(|| format!("{THREADS_VAR}={value} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_VAR} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Creates the output directory and its log; runs `body` with logging to
/// both; moves the log into place even when `body` fails.
fn with_run_log<T>(dir: &Path, level: LevelFilter, body: impl FnOnce() -> Result<T>) -> Result<T> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let log = RunLog::start(dir, level)?;
    let result = body();
    if let Err(e) = &result {
        error!("{e:#}");
    }
    log.finish()?;
    result
}

fn execute(cli: &Cli) -> Result<bool> {
    let level = match cli.log_level {
        LogLevel::Info => LevelFilter::Info,
        LogLevel::Debug => LevelFilter::Debug,
    };
    configure_threads()?;
    let config = cli.load_config()?;
    match &cli.command {
        Command::Run => {
            config.validate()?;
            let dir = config.output.dir.clone();
            with_run_log(&dir, level, || {
                let run = run_motor(&config, Some(&dir))?;
                let s = &run.summary;
                info!("{} at t={} with {} points, {} PDE solves, {:.1} s", s.termination, s.final_t, s.points, s.pde_solves, s.wall_time_s);
                println!("{} t={} points={} dir={}", s.termination, s.final_t, s.points, dir.display());
                Ok(true)
            })
        }
        Command::RunBench { problem } => {
            let dir = config.output.dir.clone();
            let kind = match problem {
                BenchArg::Quad => BenchKind::Quad,
                BenchArg::Nonconvex => BenchKind::Nonconvex,
            };
            with_run_log(&dir, level, || {
                let (_, s) = run_bench(kind, config.homotopy.predictor, Some(&dir))?;
                println!("{} t={} points={} dir={}", s.termination, s.final_t, s.points, dir.display());
                Ok(true)
            })
        }
        Command::Validate => {
            stderr_logger(level);
            let mut report = verify::validate(&config.motor(), config.seed);
            if report.passed() {
                // The remaining sections; motor sections were covered above.
                report.push("configuration", config.validate().map(|_| "all sections valid".into()).map_err(|e| e.to_string()));
            }
            print!("{}", report.table());
            for c in report.failures() {
                eprintln!("failed: {}: {}", c.name, c.detail);
            }
            Ok(report.passed())
        }
        Command::Refine { point, levels } => {
            config.validate()?;
            let dir = config.output.dir.clone();
            if !dir.join("trace.csv").is_file() {
                bail!("{} does not contain a finished run (no trace.csv)", dir.display());
            }
            stderr_logger(level);
            let r = refine_from_dir(&config, &dir, *point, *levels)?;
            match (&r.fine, &r.error) {
                (Some(v), _) => println!(
                    "point {} t={} levels={}: J1 {} -> {}, J2 {} -> {}, drift {:.3e}, residual {:.3e}",
                    r.point, r.t, r.levels, r.coarse[0], v[0], r.coarse[1], v[1], r.drift.unwrap_or(f64::NAN), r.residual.unwrap_or(f64::NAN)
                ),
                (None, e) => bail!("refinement of point {} failed: {}", r.point, e.as_deref().unwrap_or("unknown error")),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Batch runner behind the `sdprecode` binary.
//!
//! Every subcommand reads a TOML config, writes CSV artifacts into the output
//! directory through temp files that are renamed into place, and finishes
//! with `manifest.toml`. Exit codes: 0 success, 1 runtime failure, 2 bad
//! config, 3 solver non-convergence (artifacts are still written).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::optim::{dual_value, MinimaxProblem};
use crate::precoder::{slp_constraint_matrix, Scheme, SlpSolver};
use crate::sim::{self, ConfigError, ScatterConfig, SimConfig};
use crate::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_UNCONVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sdprecode", version, about = "Spatial sigma-delta precoding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Symbol and bit error rate curve over the configured SNR grid.
    Ser(CommonArgs),
    /// Angular power spectrum of the transmitted one-bit vectors.
    Spectrum(CommonArgs),
    /// Noise-free normalized IQ scatter for a single-user scheme.
    Scatter(CommonArgs),
    /// Solve one symbol-level precoding instance and print diagnostics.
    Solve(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR", env = "SDPRECODE_OUT", default_value = ".")]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override trials per point, spectrum trials and scatter realizations.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub name: String,
    pub seconds: f64,
}

/// Written last; lists every artifact of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub converged: bool,
    pub unconverged: usize,
    pub stages: Vec<StageTime>,
    pub config: SimConfig,
}

/// Write `bytes` to `dir/name` through a temp file in the same directory.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::Builder::new().prefix(&format!(".{name}.")).tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

struct Run {
    command: &'static str,
    cfg: SimConfig,
    out: PathBuf,
    artifacts: Vec<String>,
    stages: Vec<StageTime>,
    unconverged: usize,
}

impl Run {
    fn artifact(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.out, name, bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{name}: {seconds:.3} s");
        self.stages.push(StageTime {
            name: name.to_string(),
            seconds,
        });
        out
    }

    fn finish(self) -> Result<u8, Error> {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            seed: self.cfg.seed,
            artifacts: self.artifacts,
            converged: self.unconverged == 0,
            unconverged: self.unconverged,
            stages: self.stages,
            config: self.cfg,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_atomic(&self.out, "manifest.toml", text.as_bytes())?;
        Ok(if manifest.converged { EXIT_OK } else { EXIT_UNCONVERGED })
    }
}

fn load_config(args: &CommonArgs) -> Result<SimConfig, String> {
    let path = args.config.display();
    let source = fs::read_to_string(&args.config).map_err(|e| format!("{path}: {e}"))?;
    let mut cfg = SimConfig::from_toml_str(&source).map_err(|e| format!("{path}: {e}"))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
        if let Some(s) = cfg.spectrum.as_mut() {
            s.trials = t;
        }
        cfg.scatter = Some(ScatterConfig { realizations: t });
    }
    cfg.validate().map_err(|e| format!("{path}: {e}"))?;
    Ok(cfg)
}

fn cmd_ser(run: &mut Run) -> Result<(), Error> {
    let cfg = run.cfg.clone();
    let curve = run.timed("simulate", || sim::run_ser(&cfg))?;
    run.unconverged = curve.unconverged();
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    run.artifact("ser.csv", &buf)?;
    Ok(())
}

fn cmd_spectrum(run: &mut Run) -> Result<(), Error> {
    let sweep = run
        .cfg
        .spectrum
        .clone()
        .ok_or_else(|| ConfigError::new("spectrum", "the spectrum command needs a [spectrum] table"))?;
    let grid = sim::linspace(sweep.grid_deg[0], sweep.grid_deg[1], sweep.points);
    let cfg = run.cfg.clone();
    let rows = run.timed("spectrum", || sim::run_spectrum(&cfg, &grid))?;
    let mut buf = Vec::new();
    sim::write_spectrum_csv(&rows, &mut buf)?;
    run.artifact("spectrum.csv", &buf)?;
    Ok(())
}

fn cmd_scatter(run: &mut Run) -> Result<(), Error> {
    let n = run.cfg.scatter.as_ref().map_or(1000, |s| s.realizations);
    let cfg = run.cfg.clone();
    let points = run.timed("scatter", || sim::run_iq_scatter(&cfg, n))?;
    let mut buf = Vec::new();
    sim::write_scatter_csv(&points, &mut buf)?;
    run.artifact("scatter.csv", &buf)?;
    Ok(())
}

/// One SLP instance: the scene and symbols of trial 0 at the first SNR point.
fn cmd_solve(run: &mut Run) -> Result<(), Error> {
    let cfg = run.cfg.clone();
    let solver = match cfg.scheme.precoder {
        Scheme::SlpPrimal => SlpSolver::Primal,
        Scheme::SlpDual => SlpSolver::Dual,
        _ => {
            return Err(ConfigError::new("scheme.precoder", "the solve command needs slp-primal or slp-dual").into());
        }
    };
    let params = cfg.solver_params();
    let m = cfg.constellation()?.order();
    let (scene, symbols) = sim::draw_instance(&cfg, 0, 0)?;
    let out = run.timed("solve", || {
        crate::precoder::slp_psk(&scene, &symbols, m, solver, &params)
    })?;
    let report = out.metadata.solver.clone().expect("SLP reports solver state");

    let sigma: Vec<f64> = (0..scene.n_users())
        .map(|i| crate::analysis::user_noise(&scene, i).sigma_w_sq().sqrt())
        .collect();
    let c = slp_constraint_matrix(&scene.channel_matrix()?, &symbols, m, &sigma)?;
    let problem = MinimaxProblem::unit_box(c)?;
    println!("antennas        {}", scene.n_antennas());
    println!("users           {}", scene.n_users());
    println!("solver          {solver:?}");
    println!("iterations      {}", report.iterations);
    println!("restarts        {}", report.restarts);
    println!("converged       {}", report.converged);
    println!("last step       {:.3e}", report.last_step);
    println!("objective f(x)  {:.6}", report.objective);
    println!("surrogate       {:.6}", report.surrogate);
    if let Some(lambda) = &report.lambda {
        let tau = params.smoothing;
        let g = dual_value(&problem, lambda, tau);
        let reg = report.objective + 0.5 * tau * report.x.iter().map(|v| v * v).sum::<f64>();
        println!("dual g(lambda)  {g:.6}");
        println!("regularized f   {reg:.6}");
        println!("duality gap     {:.3e}", reg - g);
    }
    let min_gain = out.expected_gains.iter().copied().fold(f64::INFINITY, f64::min);
    println!("min user gain   {min_gain:.6}");
    run.unconverged = usize::from(!report.converged);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["antenna", "re", "im"])?;
    for (n, x) in out.xbar.iter().enumerate() {
        w.write_record([n.to_string(), x.re.to_string(), x.im.to_string()])?;
    }
    let buf = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    run.artifact("solution.csv", &buf)?;
    Ok(())
}

fn dispatch(cli: Cli) -> u8 {
    let (name, args): (&'static str, CommonArgs) = match cli.command {
        Command::Ser(a) => ("ser", a),
        Command::Spectrum(a) => ("spectrum", a),
        Command::Scatter(a) => ("scatter", a),
        Command::Solve(a) => ("solve", a),
    };
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: {}: {e}", args.out.display());
        return EXIT_FAILURE;
    }
    let mut run = Run {
        command: name,
        cfg,
        out: args.out.clone(),
        artifacts: Vec::new(),
        stages: Vec::new(),
        unconverged: 0,
    };
    let result = match name {
        "ser" => cmd_ser(&mut run),
        "spectrum" => cmd_spectrum(&mut run),
        "scatter" => cmd_scatter(&mut run),
        _ => cmd_solve(&mut run),
    };
    let outcome = result.and_then(|()| run.finish());
    match outcome {
        Ok(code) => {
            if code == EXIT_UNCONVERGED {
                eprintln!("warning: solver hit its iteration cap; see manifest.toml");
            }
            code
        }
        Err(Error::Config(e)) => {
            eprintln!("error: {}: {e}", args.config.display());
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => ExitCode::from(dispatch(cli)),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}

//! `effbound`: information bounds, Cramér–Rao oracles and Monte Carlo checks
//! from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 range or assumption rejection,
//! 3 verification or numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use effbound_core::models::GridSpec;
use effbound_core::EffError;

use config::{FileConfig, Format, RunConfig, Side};

pub const SCHEMA: &str = "effbound/1";

#[derive(Debug, Parser)]
#[command(
    name = "effbound",
    version,
    about = "Semiparametric efficiency bounds for indirect models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Information bound Σ and influence diagnostics for a model and functional.
    ComputeBound {
        #[command(flatten)]
        common: Common,
        /// Treat the compound Poisson intensity as known.
        #[arg(long)]
        known_lambda: bool,
        /// Include influence functions and the marginal law in the report.
        #[arg(long)]
        full: bool,
    },
    /// Cramér–Rao suprema over a ladder of nested submodels.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Basis dimensions (even, at least 4).
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
        dims: Vec<usize>,
        /// Half width of the refined window around the threshold.
        #[arg(long, default_value_t = 5.0)]
        half_width: f64,
    },
    /// Monte Carlo comparison of an efficient estimator with the bound.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long, value_enum, default_value_t = EstimatorKind::Auto)]
        estimator: EstimatorKind,
        /// Fixed spectral cutoff; by default chosen by a pilot run.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Also run the spectral estimator on the same samples (compound
        /// Poisson models with functionals away from the origin).
        #[arg(long)]
        compare: bool,
    },
    /// Gaussian-shift check and efficient estimator in the matrix white-noise model.
    WhiteNoiseDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Print the built-in models and their default parameters.
    ListModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimatorKind {
    /// Decompounding for compound Poisson, spectral for infinite activity,
    /// influence average for deconvolution, pseudoinverse for white noise.
    Auto,
    Decompound,
    Spectral,
    InfluenceAverage,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Args)]
struct Common {
    /// Built-in model name (see `list-models`).
    #[arg(long)]
    model: Option<String>,
    /// JSON or TOML run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Functional threshold; repeat for vector functionals.
    #[arg(long, allow_hyphen_values = true)]
    t: Vec<f64>,
    #[arg(long, value_enum)]
    side: Option<Side>,
    /// White-noise functional as comma-separated coordinates; repeatable.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    zeta: Vec<String>,
    /// Sampled functional as a CSV file with columns `x,zeta`; replaces `--t`.
    #[arg(long)]
    zeta_file: Option<PathBuf>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    grid_span: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Acceptance band for verification exit codes.
    #[arg(long)]
    tolerance: Option<f64>,
    #[command(flatten)]
    params: ModelParams,
}

/// Model parameters; each applies only to the models that declare it.
#[derive(Debug, Args)]
struct ModelParams {
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Drift of the Lévy process.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mean: Option<f64>,
    #[arg(long)]
    sd: Option<f64>,
    #[arg(long)]
    cp_lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    cp_mean: Option<f64>,
    #[arg(long)]
    cp_sd: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    at: Option<f64>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    shape: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    nu_mean: Option<f64>,
    #[arg(long)]
    nu_sd: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    theta_scale: Option<f64>,
    #[arg(long)]
    theta_sd: Option<f64>,
}

impl ModelParams {
    fn pairs(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("rate", self.rate),
            ("lambda", self.lambda),
            ("mean", self.mean),
            ("sd", self.sd),
            ("cp_lambda", self.cp_lambda),
            ("cp_mean", self.cp_mean),
            ("cp_sd", self.cp_sd),
            ("at", self.at),
            ("width", self.width),
            ("shape", self.shape),
            ("nu_mean", self.nu_mean),
            ("nu_sd", self.nu_sd),
            ("eps", self.eps),
            ("theta_scale", self.theta_scale),
            ("theta_sd", self.theta_sd),
        ]
    }
}

/// Outcome of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Rejected(String),
    Verification(String),
}

impl From<EffError> for Failure {
    fn from(e: EffError) -> Self {
        if e.is_rejection() {
            let reason = match &e {
                EffError::ParametricRateUnavailable { beta_hat } => {
                    format!("β̂ ≥ 1/2 (β̂ = {beta_hat:.3}): no √n-rate for indicator functionals")
                }
                EffError::OutOfRange(m) => format!("functional not in ran A*: {m}"),
                other => other.to_string(),
            };
            Failure::Rejected(reason)
        } else if e.is_usage() || matches!(e, EffError::OutsideGrid { .. } | EffError::Io(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Verification(e.to_string())
        }
    }
}

fn resolve(
    command: &str,
    c: &Common,
    default_model: &str,
) -> Result<(RunConfig, Option<FileConfig>), Failure> {
    let file = c.config.as_deref().map(FileConfig::load).transpose()?;
    let f = file.clone().unwrap_or_default();
    let grid = GridSpec {
        n: c.grid_n,
        span: c.grid_span,
    };
    let model = config::model_spec(
        f.model,
        c.model.as_deref(),
        &c.params.pairs(),
        grid,
        default_model,
    )?;
    let zeta = if c.zeta.is_empty() {
        f.zeta
    } else {
        vec![c
            .zeta
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Failure::Usage(format!("--zeta {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?]
    };
    let cfg = RunConfig {
        command: command.to_string(),
        model,
        t: if c.t.is_empty() { f.t } else { c.t.clone() },
        side: c.side.or(f.side).unwrap_or_default(),
        zeta,
        zeta_file: c.zeta_file.clone().or(f.zeta_file),
        seed: c.seed.or(f.seed).unwrap_or(42),
        tolerance: c.tolerance.or(f.tolerance),
        format: c.format,
    };
    Ok((cfg, file))
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("EFFBOUND_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("EFFBOUND_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::ComputeBound {
            common,
            known_lambda,
            full,
        } => {
            let (cfg, _) = resolve("compute-bound", &common, "levy-gamma")?;
            commands::compute_bound(&cfg, known_lambda, full, common.out.as_deref())
        }
        Command::Oracle {
            common,
            dims,
            half_width,
        } => {
            let (cfg, _) = resolve("oracle", &common, "levy-cp-normal")?;
            commands::oracle(&cfg, &dims, half_width, common.out.as_deref())
        }
        Command::Simulate {
            common,
            mc,
            estimator,
            cutoff,
            compare,
        } => {
            let (cfg, file) = resolve("simulate", &common, "levy-cp-normal")?;
            let f = file.unwrap_or_default();
            let opts = commands::SimOptions {
                n: mc.n.or(f.n).unwrap_or(10_000),
                reps: mc.reps.or(f.reps).unwrap_or(200),
                estimator,
                cutoff,
                compare,
            };
            commands::simulate(&cfg, &opts, common.out.as_deref())
        }
        Command::WhiteNoiseDemo { common, reps } => {
            let (cfg, file) = resolve("white-noise-demo", &common, "wn-matrix")?;
            let reps = reps.or(file.and_then(|f| f.reps)).unwrap_or(10_000);
            commands::white_noise_demo(&cfg, reps, common.out.as_deref())
        }
        Command::ListModels => commands::list_models(),
    }
}

/// Die quietly on a closed pipe (`effbound ... | head`) like other Unix tools.
#[cfg(unix)]
fn default_sigpipe() {
    // SAFETY: restores the default disposition before any other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn default_sigpipe() {}

fn main() -> ExitCode {
    default_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Rejected(m)) => {
            eprintln!("rejected: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}

//! Command-line harness: config loading, experiment setup and the
//! subcommands behind the `mergefront` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Experiment, SweepRow};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mergefront::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error(transparent)]
    Optimization(#[from] mergefront::mobo::OptimizationFailure),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(mergefront::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mergefront", version, about = "Token-merging schedule search over a noisy channel")]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump the calibration and evaluation splits, and the weights when
    /// they are generated from a seed.
    GenData(ConfigArg),
    /// Fit the prototype head and report its accuracy.
    Calibrate(ConfigArg),
    /// Run the schedule search and write history, front and summary.
    Optimize(ConfigArg),
    /// Evaluate the front and the baselines across SNRs and build the
    /// adaptive policy.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Front file; defaults to `front.json` in the output directory.
        #[arg(long)]
        front: Option<PathBuf>,
        /// Comma-separated SNRs in dB; defaults to `sweep_snrs`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
    },
    /// Pick one operating point from a front.
    Select {
        #[arg(long)]
        front: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Write the per-layer merge assignments of one evaluation image as CSV.
    ExportTrace {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated merge proportions, one per layer.
        #[arg(long, value_delimiter = ',')]
        schedule: Vec<f64>,
        /// Index into the evaluation split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, conflicts_with_all = ["min_flops", "flops_at_most"])]
    pub max_accuracy: bool,
    /// Cheapest member with accuracy at least `--acc-at-least`.
    #[arg(long, requires = "acc_at_least", conflicts_with = "flops_at_most")]
    pub min_flops: bool,
    /// Cheapest member needing at most this many FLOPs.
    #[arg(long)]
    pub flops_at_most: Option<f64>,
    #[arg(long)]
    pub acc_at_least: Option<f64>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(c) => commands::gen_data(&RunConfig::load(&c.config)?),
        Command::Calibrate(c) => commands::calibrate(&RunConfig::load(&c.config)?),
        Command::Optimize(c) => commands::optimize(&RunConfig::load(&c.config)?).map(|_| ()),
        Command::Sweep { config, front, snr } => {
            let cfg = RunConfig::load(&config.config)?;
            let front = front.unwrap_or_else(|| cfg.output_dir.join(commands::FRONT_FILE));
            commands::sweep(&cfg, &front, snr.as_deref())
        }
        Command::Select { front, scenario } => {
            let constraint = scenario.constraint()?;
            let selection = commands::select(&front, &constraint)?;
            println!("{}", serde_json::to_string_pretty(&selection).expect("selection serializes"));
            Ok(())
        }
        Command::ExportTrace {
            config,
            schedule,
            sample,
            out,
        } => {
            let cfg = RunConfig::load(&config.config)?;
            let csv = commands::export_trace(&cfg, &schedule, sample)?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(CliError::io(path)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

impl ScenarioArgs {
    pub fn constraint(&self) -> Result<mergefront::mobo::ScenarioConstraint, CliError> {
        use mergefront::mobo::ScenarioConstraint as C;
        if self.max_accuracy {
            return Ok(C::MaxAccuracy);
        }
        if self.min_flops {
            let tau = self.acc_at_least.expect("clap enforces --acc-at-least");
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(CliError::Config(format!("--acc-at-least {tau} must be a non-negative number")));
            }
            return Ok(C::MinFlopsSubjectToAccuracy { min_accuracy: tau });
        }
        match self.flops_at_most {
            Some(b) if b.is_finite() && b >= 0.0 => Ok(C::MaxThroughputSubjectToFlops { max_flops: b }),
            Some(b) => Err(CliError::Config(format!("--flops-at-most {b} must be a non-negative number"))),
            None => Err(CliError::Config(
                "choose one of --max-accuracy, --min-flops --acc-at-least T, --flops-at-most B".into(),
            )),
        }
    }
}

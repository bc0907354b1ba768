//! Batch front end: simulate, diagnose, train, forecast, evaluate and the
//! Bayesian train/forecast pair, all driven by a TOML run configuration
//! whose keys can be overridden by flags.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 I/O or parse
//! failure, 3 checkpoint/configuration mismatch, 4 training divergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use smoothrnn::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SMOOTHRNN_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: Error },
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn file(path: &Path, source: Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::File { source, .. } | CliError::Core(source) => match source {
                Error::Io(_) | Error::Parse { .. } => 2,
                Error::Mismatch(_) => 3,
                Error::Training(_) => 4,
                Error::Dimension(_)
                | Error::InvalidArgument(_)
                | Error::Degenerate(_)
                | Error::Singular(_) => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "smoothrnn",
    version,
    about = "Exponentially smoothed recurrent networks for time series"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: config, then $SMOOTHRNN_OUT, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Llm,
    AlphaRnnDgp,
}

impl SimKind {
    pub fn tag(self) -> &'static str {
        match self {
            SimKind::Llm => "llm",
            SimKind::AlphaRnnDgp => "alpha-rnn-dgp",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic series.
    Simulate(SimulateArgs),
    /// Correlograms, unit-root test and a recommended sequence length.
    Diagnose(DiagnoseArgs),
    /// Fit a model (optionally after cross-validation) and save a checkpoint.
    Train(ModelArgs),
    /// Forecast the test block from a checkpoint.
    Forecast(ForecastArgs),
    /// Summarise several forecast files in one table.
    Evaluate(EvaluateArgs),
    /// Fit a variational posterior over the weights.
    BayesTrain(BayesTrainArgs),
    /// Predictive intervals from a variational checkpoint.
    BayesForecast(BayesForecastArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator to run.
    pub kind: Option<SimKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output file (default: <out>/<kind>.csv).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub adf_max_lag: Option<usize>,
    /// Cap on the recommended sequence length.
    #[arg(long)]
    pub p_cap: Option<usize>,
    /// Also decompose with this seasonal period.
    #[arg(long)]
    pub period: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated feature columns.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Run the cross-validated grid search before the final fit.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub decompose_period: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint file (default: <out>/<arch>.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Forecast CSV files to compare.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Summary file (default: <out>/summary.csv).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Add training times from the timing files next to each forecast.
    #[arg(long)]
    pub with_timings: bool,
}

#[derive(Debug, Args)]
pub struct BayesTrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub bayes_epochs: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BayesForecastArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Variational checkpoint (default: <out>/<arch>.vckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Draw weights only, without observation noise.
    #[arg(long)]
    pub no_observation_noise: bool,
}

impl ModelArgs {
    /// Writes every flag that was given over its configuration key.
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.data.is_some() {
            cfg.data.path = self.data.clone();
        }
        if self.target.is_some() {
            cfg.data.target = self.target.clone();
        }
        set(&mut cfg.data.features, &self.features);
        if self.decompose_period.is_some() {
            cfg.data.decompose_period = self.decompose_period;
        }
        set(&mut cfg.model.arch, &self.arch);
        set(&mut cfg.model.hidden, &self.hidden);
        set(&mut cfg.model.p, &self.p);
        set(&mut cfg.model.m, &self.m);
        set(&mut cfg.model.mode, &self.mode);
        set(&mut cfg.model.horizon, &self.horizon);
        set(&mut cfg.split.train, &self.train_frac);
        set(&mut cfg.split.validation, &self.val_frac);
        set(&mut cfg.train.max_epochs, &self.epochs);
        set(&mut cfg.train.batch_size, &self.batch_size);
        set(&mut cfg.train.learning_rate, &self.lr);
        set(&mut cfg.train.lambda1, &self.lambda1);
        set(&mut cfg.train.patience, &self.patience);
        if self.cv {
            cfg.cv.enabled = true;
        }
    }
}

/// Resolved configuration and output directory for one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Context { cfg, out })
}

/// Runs one parsed invocation.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut ctx = context(cli)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&mut ctx, a),
        Command::Diagnose(a) => commands::diagnose(&mut ctx, a),
        Command::Train(a) => {
            a.apply(&mut ctx.cfg);
            commands::train(&ctx)
        }
        Command::Forecast(a) => {
            a.model.apply(&mut ctx.cfg);
            commands::forecast(&ctx, a.checkpoint.as_deref())
        }
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::BayesTrain(a) => {
            a.model.apply(&mut ctx.cfg);
            if let Some(e) = a.bayes_epochs {
                ctx.cfg.bayes.max_epochs = e;
            }
            if let Some(n) = a.n_samples {
                ctx.cfg.bayes.n_samples = n;
            }
            commands::bayes_train(&ctx)
        }
        Command::BayesForecast(a) => {
            a.model.apply(&mut ctx.cfg);
            if let Some(n) = a.n_draws {
                ctx.cfg.bayes.n_draws = n;
            }
            if let Some(l) = a.level {
                ctx.cfg.bayes.level = l;
            }
            if a.no_observation_noise {
                ctx.cfg.bayes.observation_noise = false;
            }
            commands::bayes_forecast(&ctx, a.checkpoint.as_deref())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

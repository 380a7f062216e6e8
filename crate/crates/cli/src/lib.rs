//! Command-line front end: `detect`, `baseline`, `synth`, `replay`,
//! `score-reward` and `plot`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 partial failure
//! (some episodes failed, results for the rest are written), 3 backend failure.

pub mod config;
pub mod plot;

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use tsagent_core::protocol::{AgentRole, BackendKind};
use tsagent_core::workflow::LocalizationMode;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{failed} of {total} episode(s) failed; results for the rest were written")]
    Partial { failed: usize, total: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Partial { .. } => 2,
            CliError::BackendUnavailable(_) | CliError::Backend(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tsagent", version, about = "Tool-augmented time-series anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the agent workflow over one or more series.
    Detect(DetectArgs),
    /// Score series with a statistical baseline and threshold at mean + k*std.
    Baseline(BaselineArgs),
    /// Generate a labeled synthetic series from a JSON spec.
    Synth(SynthArgs),
    /// Re-run a recorded episode offline and check its verdicts.
    Replay(ReplayArgs),
    /// Score a recorded episode against ground truth.
    ScoreReward(ScoreRewardArgs),
    /// Draw a series with truth and verdict bands as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Default)]
pub struct DetectArgs {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Series CSV (`index,value[,label]`). Repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Backend for every role.
    #[arg(long, value_parser = config::parse_backend_kind)]
    pub backend: Option<BackendKind>,
    /// Per-role override, e.g. `evaluator=heuristic`. Repeatable.
    #[arg(long = "role-backend", value_parser = config::parse_role_backend)]
    pub role_backends: Vec<(AgentRole, BackendKind)>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Replay fixture (JSONL) for the replay backend.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Record every exchange to this JSONL file, usable later with `--replay`.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub max_refinements: Option<usize>,
    #[arg(long)]
    pub tool_budget: Option<usize>,
    #[arg(long)]
    pub window_length: Option<usize>,
    #[arg(long)]
    pub window_step: Option<usize>,
    #[arg(long)]
    pub min_tail: Option<usize>,
    /// Worker threads; defaults to every logical core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, value_parser = config::parse_localization)]
    pub localization: Option<LocalizationMode>,
    /// Also write `plot.svg` per series.
    #[arg(long)]
    pub plot: bool,
    /// Lowest verdict confidence that counts as a detection.
    #[arg(long)]
    pub min_confidence: Option<u8>,
}

impl DetectArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            inputs: self.inputs.clone(),
            out: self.out.clone(),
            backend: self.backend,
            role_backends: self.role_backends.iter().copied().collect(),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            timeout_secs: self.timeout_secs,
            replay: self.replay.clone(),
            record: self.record.clone(),
            max_refinements: self.max_refinements,
            tool_budget: self.tool_budget,
            window_length: self.window_length,
            window_step: self.window_step,
            min_tail: self.min_tail,
            workers: self.workers,
            sequential: self.sequential.then_some(true),
            localization: self.localization,
            plot: self.plot.then_some(true),
            min_confidence: self.min_confidence,
        }
    }

    /// Settings file (if any) with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overridden_by(self.flags()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Fft,
    Sr,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold multiplier k in mean + k*std.
    #[arg(long, default_value_t = 3.0)]
    pub k: f64,
    /// Share of the spectrum kept by the FFT low-pass.
    #[arg(long, default_value_t = 0.1)]
    pub keep_fraction: f64,
    /// Moving-average width for the spectral residual.
    #[arg(long, default_value_t = 3)]
    pub avg_window: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthesis spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Also write the verdicts here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreRewardArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Labeled CSV: either the whole series or just the trace window.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub w_ts: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_rm: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_fp: f64,
    #[arg(long)]
    pub no_two_sided: bool,
    #[arg(long)]
    pub no_fp: bool,
    #[arg(long)]
    pub no_rule_matching: bool,
    /// Knowledge store JSON; the built-in store otherwise.
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSON array of verdicts, as written by `detect`.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 960)]
    pub width: u32,
    #[arg(long, default_value_t = 320)]
    pub height: u32,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Detect(a) => commands::detect(&a.resolve()?).map(|_| ()),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::ScoreReward(a) => commands::score_reward(&a).map(|_| ()),
        Command::Plot(a) => commands::plot(&a),
    }
}

pub use commands::{detect, DetectSummary, SeriesSummary};

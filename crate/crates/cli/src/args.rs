use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dualground", version, about = "Dual-mode GUI grounding toolkit")]
pub struct Cli {
    /// Key-value TOML file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run progressive synthesis over a sample corpus.
    Synthesize(SynthesizeArgs),
    /// Evaluate a backend under the switching policy.
    Eval(EvalArgs),
    /// Evaluate once per alpha and emit a CSV.
    Sweep(SweepArgs),
    /// Per-source fast/slow counts of training records.
    Stats(StatsArgs),
    /// Generate a synthetic scene corpus and its samples.
    GenScenes(GenScenesArgs),
    /// Parse or render reasoning chains.
    #[command(subcommand)]
    Chain(ChainCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotatorKind {
    /// Reuse the grounding backend.
    Same,
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieBreakArg {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,

    /// Server base URL; overrides DUALGROUND_BACKEND_URL and the config file.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,

    /// Scene corpus for the mock backend [default: scenes.jsonl next to the samples].
    #[arg(long, value_name = "FILE")]
    pub scenes: Option<PathBuf>,

    /// Mock error model (JSON or TOML).
    #[arg(long, value_name = "FILE")]
    pub mock_model: Option<PathBuf>,

    /// Disable the mock's penalty for reasoning on simple scenes.
    #[arg(long)]
    pub no_overthinking: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,

    /// Per-request timeout for HTTP backends.
    #[arg(long, default_value_t = 120.0, value_name = "SECS")]
    pub timeout_secs: f64,

    /// Retries per backend call on transient errors.
    #[arg(long, default_value_t = 2)]
    pub retries: u32,

    /// Prompt templates (JSON or TOML).
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Sample corpus (JSONL, optionally .gz).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,

    /// Backend producing summaries and focus analyses.
    #[arg(long, value_enum, default_value = "same")]
    pub annotator: AnnotatorKind,

    #[arg(long, value_name = "URL")]
    pub annotator_endpoint: Option<String>,

    #[arg(long, value_name = "FILE")]
    pub out_fast: PathBuf,

    #[arg(long, value_name = "FILE")]
    pub out_slow: PathBuf,

    #[arg(long, value_name = "FILE")]
    pub out_unresolved: PathBuf,

    /// Minimum decimal places in exported coordinates.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub precision: u8,

    /// Stream progress to stderr as JSON lines.
    #[arg(long)]
    pub progress: bool,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha {a} outside [0, 1]"))
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled sample corpus (JSONL).
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[arg(long, default_value = "0.6", value_parser = parse_alpha)]
    pub alpha: f64,

    #[arg(long, value_enum, default_value = "fast")]
    pub tie_break: TieBreakArg,

    #[arg(long, value_name = "FILE")]
    pub report_json: Option<PathBuf>,

    #[arg(long, value_name = "FILE")]
    pub report_table: Option<PathBuf>,

    /// Overall accuracy pooled over samples instead of averaged over cells.
    #[arg(long)]
    pub weighted: bool,

    /// Also print fast/slow activation by element kind.
    #[arg(long)]
    pub activation: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,

    /// Comma-separated alphas.
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    pub alphas: Vec<f64>,

    #[arg(long, value_enum, default_value = "fast")]
    pub tie_break: TieBreakArg,

    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,

    #[arg(long)]
    pub weighted: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Training-record files (JSONL); may repeat.
    #[arg(long, value_name = "FILE", required = true)]
    pub dataset: Vec<PathBuf>,

    /// Print counts as 36K rather than 36000.
    #[arg(long)]
    pub thousands: bool,

    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    /// Generation parameters (JSON or TOML).
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,

    /// Output directory for scenes.jsonl and samples.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub n_scenes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ChainCommand {
    /// Parse a chain and print its segments.
    Parse {
        /// Chain text, or - for stdin.
        text: String,
        #[arg(long)]
        json: bool,
    },
    /// Render a chain in canonical form.
    Render {
        /// Point as x,y.
        #[arg(long, value_name = "X,Y")]
        point: String,
        #[arg(long)]
        summary: Option<String>,
        #[arg(long)]
        focus: Option<String>,
        #[arg(long, default_value_t = 2)]
        precision: u8,
    },
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "dpgenlab",
    version,
    about = "Privacy and utility workbench for temperature-scaled generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for parallel work (default: available processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Where to write the run manifest (default: `<out>.manifest.json`, or
    /// `./<subcommand>.manifest.json` when writing to stdout).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Exact privacy report for one neighbor pair.
    Analyze(AnalyzeArgs),
    /// Closed-form token/message bounds and the temperature floor.
    Bound(BoundArgs),
    /// Temperature maximizing E(T) + (lambda/L) T.
    Optimize(OptimizeArgs),
    /// One-shot empirical leakage at a single (T, L).
    Estimate(EstimateArgs),
    /// Seeded temperature sweep to CSV (and optionally SVG).
    Sweep(SweepArgs),
    /// Run the built-in oracle suite.
    Selftest(SelftestArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Bound(_) => "bound",
            Command::Optimize(_) => "optimize",
            Command::Estimate(_) => "estimate",
            Command::Sweep(_) => "sweep",
            Command::Selftest(_) => "selftest",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut Option<PathBuf>> {
        match self {
            Command::Analyze(a) => Some(&mut a.out.out),
            Command::Bound(a) => Some(&mut a.out.out),
            Command::Optimize(a) => Some(&mut a.out.out),
            Command::Estimate(a) => Some(&mut a.out.out),
            Command::Sweep(a) => Some(&mut a.out.out),
            Command::Selftest(a) => Some(&mut a.out.out),
            Command::Replay(_) => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model spec (JSON).
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    /// Restrict to one context id.
    #[arg(long)]
    pub context: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset (CSV). Without it the dataset is empty.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NeighborArgs {
    /// Index of the record to replace.
    #[arg(long, default_value_t = 0)]
    pub neighbor_index: usize,

    /// Replacement record as `label,weight,tag`.
    #[arg(long, value_name = "RECORD")]
    pub neighbor_record: String,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output file (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// Samples per arm per run.
    #[arg(long, default_value_t = 250)]
    pub samples: usize,

    /// Laplace smoothing pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,

    /// Root seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Label projection: identity, first_token or auto.
    #[arg(long, default_value = "auto")]
    pub projection: String,

    /// Information score, `kind[:params]`.
    #[arg(long, default_value = "exp_logit_plus_length:0.1")]
    pub utility: String,

    /// Draw both arms from the same random stream.
    #[arg(long)]
    pub shared_seed: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub neighbor: NeighborArgs,
    #[arg(long = "T", value_name = "T")]
    pub temperature: f64,
    #[arg(long = "L", value_name = "L")]
    pub length: usize,
    /// Epsilons at which to report the hockey-stick delta (default: quarters of the exact epsilon).
    #[arg(long, value_delimiter = ',')]
    pub eps_points: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    /// Logit sensitivity. Without it, computed from --model/--data/--neighbor-record.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub neighbor_index: usize,
    #[arg(long, value_name = "RECORD")]
    pub neighbor_record: Option<String>,
    #[arg(long = "T", value_name = "T")]
    pub temperature: f64,
    #[arg(long = "L", value_name = "L")]
    pub length: usize,
    /// Message-level budget for the temperature floor.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "L", value_name = "L")]
    pub length: usize,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value = "exp_logit_plus_length:0.1")]
    pub utility: String,
    /// Temperature bracket `lo:hi`.
    #[arg(long, default_value = "0.1:2.0")]
    pub bracket: String,
    /// Also write E(T) and the objective on --grid as CSV.
    #[arg(long, value_name = "PATH")]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value = "0.1:2.0:0.1")]
    pub grid: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub neighbor: NeighborArgs,
    #[arg(long = "T", value_name = "T")]
    pub temperature: f64,
    #[arg(long = "L", value_name = "L")]
    pub length: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub neighbor: NeighborArgs,
    /// Temperature grid `start:stop:step`, endpoints inclusive.
    #[arg(long, default_value = "0.1:2.0:0.1")]
    pub grid: String,
    /// Message lengths, comma separated.
    #[arg(long = "L", value_name = "L", value_delimiter = ',', default_values_t = [2, 5, 10])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Line plot of every metric.
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Write the case results as JSON.
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,

    /// Write to this path instead of the recorded output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Environment variable naming the root under which default output
/// directories are created.
pub const OUT_ROOT_ENV: &str = "GLYPHGEN_OUT";

/// One `label[:weight]` flag value.
#[derive(Clone, Debug, PartialEq)]
pub struct Impression {
    pub label: String,
    pub weight: f64,
}

pub fn parse_impression(s: &str) -> Result<Impression, String> {
    let (label, weight) = match s.rsplit_once(':') {
        Some((l, w)) => (l, w.parse::<f64>().map_err(|e| format!("weight of {l:?}: {e}"))?),
        None => (s, 1.0),
    };
    if label.is_empty() {
        return Err("empty label".into());
    }
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(format!("weight {weight} not in (0, 1]"));
    }
    Ok(Impression {
        label: label.to_string(),
        weight,
    })
}

#[derive(Debug, Parser)]
#[command(name = "glyphgen", version, about = "Impression-conditioned glyph generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize, load or summarize a font corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render glyphs for a set of impressions.
    Generate(GenerateArgs),
    /// Render interpolation grids.
    #[command(subcommand)]
    Interpolate(InterpolateCommand),
    /// Inspect what a checkpoint has learned.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Serve the HTTP generation API.
    Serve(ServeArgs),
    /// Re-run the invocation recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args)]
pub struct OutArgs {
    /// Output directory; defaults to `$GLYPHGEN_OUT/<command>` (or `runs/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct CorpusSource {
    /// Corpus root holding `<font_id>/<A..Z>.png`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label manifest; defaults to `<corpus>/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Skip malformed fonts instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Generate a synthetic corpus with planted shape-impression rules.
    Synth(SynthArgs),
    /// Load and validate a corpus, reporting skipped fonts.
    Load(LoadArgs),
    /// Print label statistics.
    Stats(LoadArgs),
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub fonts: usize,
    #[arg(long, default_value_t = 20)]
    pub labels: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise_rate: f64,
    /// Glyph side in pixels; 64 by default, 16 with `--desk`.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub desk: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct LoadArgs {
    #[command(flatten)]
    pub source: CorpusSource,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: CorpusSource,
    #[command(flatten)]
    pub split: SplitArgs,
    /// JSON or TOML file overriding fields of the base profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the laptop-scale profile.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub stage_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train the ablation conditioned on raw labels.
    #[arg(long)]
    pub no_cmle: bool,
    /// Text embedding table (`label v1 .. vD` per line); hashed embeddings otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: CorpusSource,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub desk: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Glyphs generated per conditioned font.
    #[arg(long, default_value = "ABCDEFGHIJKLMNOPQRSTUVWXYZ")]
    pub chars: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    Fid(FidArgs),
    IntraFid(IntraFidArgs),
    MapTrain(EvalArgs),
    MapTest(EvalArgs),
    /// mAP-test as conditioning labels are removed.
    Sweep(SweepArgs),
}

#[derive(Clone, Debug, Args)]
pub struct FidArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Samples per char class; 5000 by default, 50 with `--desk`.
    #[arg(long)]
    pub per_char: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct IntraFidArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Minimum fonts per class; 200 by default, 20 with `--desk`.
    #[arg(long)]
    pub min_class_size: Option<usize>,
    /// Samples per class; 5000 by default, 50 with `--desk`.
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.6,0.9")]
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated `label[:weight]` list.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_impression)]
    pub impressions: Vec<Impression>,
    #[arg(long, default_value = "ABCHERONS")]
    pub chars: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Subcommand)]
pub enum InterpolateCommand {
    /// Between two impression sets under fixed noise.
    Impression(ImpressionInterpArgs),
    /// Between two noise seeds under a fixed impression set.
    Noise(NoiseInterpArgs),
}

#[derive(Clone, Debug, Args)]
pub struct ImpressionInterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_impression)]
    pub from: Vec<Impression>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_impression)]
    pub to: Vec<Impression>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value = "ABCHERONS")]
    pub chars: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct NoiseInterpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_impression)]
    pub impressions: Vec<Impression>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub seed_2: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value = "ABCHERONS")]
    pub chars: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Correlation of the learned label posterior, with biclustered order.
    Correlation(CorrelationArgs),
}

#[derive(Clone, Debug, Args)]
pub struct CorrelationArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: CorpusSource,
    /// Most frequent labels kept; capped at the vocabulary size.
    #[arg(long, default_value_t = 30)]
    pub top_m: usize,
    /// Bicluster count; chosen by eigengap when absent.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Heatmap cell size in pixels.
    #[arg(long, default_value_t = 12)]
    pub cell: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "GLYPHGEN_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    /// A `run-manifest.json` written by an earlier invocation.
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relabel::encoders::EncoderKind;
use relabel::heads::HeadKind;

#[derive(Debug, Parser)]
#[command(name = "relabel", version, about = "Sentence-level multi-label certainty classification")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the templated synthetic sentences for a schema.
    Synth(SynthArgs),
    /// Generate the toy template-grammar corpus.
    Toy(ToyArgs),
    /// Train skip-gram word vectors on plain text or datasets.
    Pretrain(PretrainArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Score a checkpoint against a labelled dataset.
    Eval(EvalArgs),
    /// Label raw reports, one per line.
    Label(LabelArgs),
    /// Dump per-token attention weights.
    Attention(AttentionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    Off,
    Augment,
    Only,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Label schema JSON; the reference schema when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_val: usize,
    /// Let the rare labels appear in training too.
    #[arg(long)]
    pub keep_rare: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Plain text (one document per line) or `.jsonl` datasets; repeatable.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Share of reports held out for validation when `--val` is absent.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_parser = parse_encoder)]
    pub model: Option<EncoderKind>,
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadKind>,
    #[arg(long)]
    pub deep_classifier: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub ntok: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub cnn_maps: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Stop once validation micro F1 reaches this value.
    #[arg(long)]
    pub target_f1: Option<f64>,
    /// Pretrained vectors in text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SynthMode::Off)]
    pub synth: SynthMode,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Train one model per seed into `<out>/seed-<n>`, e.g. `1..5` or `1,4,9`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Run encoders and attention over pad positions too.
    #[arg(long)]
    pub strict_paper_parity: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or the parent of `seed-<n>` directories with `--seeds`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the schema saved with the checkpoint.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Plain text, one report per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Plain text, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Also print each predicted label's weights to the terminal.
    #[arg(long)]
    pub show: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("expected `a..b` or a comma list, got `{s}`");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(Seeds(seeds))
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    s.parse().map_err(|e: relabel::Error| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    s.parse().map_err(|e: relabel::Error| e.to_string())
}

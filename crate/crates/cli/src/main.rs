mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "skelreid",
    version,
    about = "Skeleton-only clothes-changing person re-identification"
)]
struct Cli {
    /// Log filter, e.g. `info`, `debug` or `skelreid=trace`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic gait benchmark (train/query/gallery JSON Lines).
    Synth(SynthArgs),
    /// Train an encoder and write a checkpoint plus a per-epoch loss CSV.
    Train(TrainArgs),
    /// Embed every segment of a dataset with a trained checkpoint.
    Embed(EmbedArgs),
    /// Rank gallery entries for every query video.
    Match(MatchArgs),
    /// Rank-k and mAP from embeddings or from a rankings file.
    Eval(EvalArgs),
    /// Re-ranking × re-voting ablation grid under both protocols.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving train.jsonl, query.jsonl and gallery.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub clothes: Option<usize>,
    /// Videos per (identity, clothes); the last two become gallery and query.
    #[arg(long)]
    pub videos_per_outfit: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Jitter standard deviation as a fraction of the mean limb length.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Skeleton topology JSON; defaults to the 33-joint body model.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Subtract the root joint from every joint of every frame on load.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (JSON Lines).
    #[arg(long)]
    pub data: PathBuf,
    /// TOML training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss CSV output path [default: <out> with extension `loss.csv`].
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channel plan, e.g. `4,16,32,64,128,256`.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub identities_per_batch: Option<usize>,
    #[arg(long)]
    pub segments_per_identity: Option<usize>,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Embeddings output (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub segment_len: usize,
    #[arg(long, default_value_t = 25)]
    pub segment_stride: usize,
    /// Subtract the root joint from every joint of every frame on load.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoteArg {
    None,
    Dowdall,
    Borda,
}

#[derive(Debug, Args)]
pub struct MatchFlags {
    /// Segment fusion for a query video.
    #[arg(long, value_enum, default_value_t = VoteArg::Dowdall)]
    pub vote: VoteArg,
    /// Truncation depth of the Borda count.
    #[arg(long, default_value_t = 5)]
    pub borda_k: usize,
    /// Use plain cosine distances.
    #[arg(long)]
    pub no_rerank: bool,
    #[command(flatten)]
    pub rerank: RerankFlags,
}

#[derive(Debug, Args)]
pub struct RerankFlags {
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 6)]
    pub k2: usize,
    /// Weight of the original distance in the re-ranked distance.
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Query embeddings (JSON Lines).
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery embeddings (JSON Lines).
    #[arg(long)]
    pub gallery: PathBuf,
    /// Rankings output (JSON Lines, one record per query video).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the query × gallery distance matrix used for ranking.
    #[arg(long)]
    pub dist_csv: Option<PathBuf>,
    #[command(flatten)]
    pub flags: MatchFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Cc,
    Standard,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gallery embeddings; always needed for gallery labels.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Query embeddings to match and score.
    #[arg(long, required_unless_present = "rankings", conflicts_with = "rankings")]
    pub query: Option<PathBuf>,
    /// Rankings produced by `match`.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Cc)]
    pub protocol: ProtocolArg,
    /// Discard same-person same-camera gallery entries.
    #[arg(long)]
    pub same_camera_filter: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: MatchFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Protocols to report.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ProtocolArg::Cc, ProtocolArg::Standard])]
    pub protocols: Vec<ProtocolArg>,
    #[arg(long)]
    pub same_camera_filter: bool,
    #[arg(long, default_value_t = 5)]
    pub borda_k: usize,
    #[command(flatten)]
    pub rerank: RerankFlags,
    /// Also write the grid as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Embed(a) => commands::embed(a),
        Command::Match(a) => commands::match_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

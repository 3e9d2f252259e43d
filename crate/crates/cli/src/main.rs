mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use render::Axis;

#[derive(Parser, Debug)]
#[command(
    name = "brainmap",
    version,
    about = "Map free-text queries to brain activation volumes",
    args_override_self = true,
    after_help = "Any subcommand also accepts --config FILE with `flag = value` lines."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a JSONL corpus, write the clean records, a split and a search index
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with clustered vocabularies and peaks
    SynthCorpus(SynthCorpusArgs),
    /// Write one Gaussian target volume per study
    SynthTargets(SynthTargetsArgs),
    /// Add the five text variants to every study
    Augment(AugmentArgs),
    /// Train the text-to-volume generator
    Train(TrainArgs),
    /// Generate a volume for a text
    Predict(PredictArgs),
    /// Optionally refine a query against the index, then generate a volume
    Query(QueryArgs),
    /// Score a checkpoint with top-k retention metrics
    Evaluate(EvaluateArgs),
    /// Write PGM slices of a volume
    Render(RenderArgs),
    /// Compare analytic and finite-difference gradients on a tiny generator
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Clean JSONL corpus
    #[arg(long)]
    pub output: PathBuf,
    /// Split assignment (JSON)
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// TF-IDF index over training titles (all titles without --splits)
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// train,val,test
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratios: String,
}

#[derive(Args, Debug)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub studies: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthTargetsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 9.0)]
    pub fwhm: f64,
    #[arg(long, value_enum, default_value_t = VolumeFormat::Native)]
    pub format: VolumeFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VolumeFormat {
    Native,
    Nifti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClientKind {
    Mock,
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct ClientArgs {
    #[arg(long, value_enum, default_value_t = ClientKind::Mock)]
    pub client: ClientKind,
    /// OpenAI-compatible endpoint for --client http
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    pub model: String,
    /// Extra attempts after a retryable failure
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Corpus with augmented variants filled in
    #[arg(long)]
    pub output: PathBuf,
    /// Append-only completion cache; in-memory when omitted
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    BaselineHashing,
    ExternalVectors,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Train on the train split only
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Directory written by synth-targets; targets are synthesized when omitted
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, default_value_t = 9.0)]
    pub fwhm: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_encoder: f64,
    #[arg(long, default_value_t = 3e-2)]
    pub lr_generator: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 8192)]
    pub buckets: usize,
    #[arg(long, value_enum, default_value_t = EncoderArg::BaselineHashing)]
    pub encoder: EncoderArg,
    /// JSONL of {id, vector} for the external-vectors encoder
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Train on titles only even when variants are present
    #[arg(long)]
    pub no_aug: bool,
    /// Per-epoch mean losses as JSON
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required_unless_present = "id")]
    pub text: Option<String>,
    /// Output volume; `.nii` selects NIfTI, anything else the native format
    #[arg(long)]
    pub output: PathBuf,
    /// Latent file for external-vectors checkpoints
    #[arg(long, requires = "id")]
    pub latents: Option<PathBuf>,
    #[arg(long, requires = "latents")]
    pub id: Option<String>,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub output: PathBuf,
    /// Refine the query before generating
    #[arg(long, requires = "index")]
    pub t2s: bool,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5)]
    pub retrieve_k: usize,
    #[arg(long, default_value_t = 8)]
    pub keywords: usize,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Evaluate one split of this assignment; the whole corpus otherwise
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Retention percentages
    #[arg(long, default_value = "100,90,80,70,60,50,40,30,20,10")]
    pub fractions: String,
    /// Token masking rate; 0 is the standard environment
    #[arg(long, default_value_t = 0.3)]
    pub mask_rate: f64,
    /// Also run the refined-query condition and report the change
    #[arg(long, overrides_with = "no_chat")]
    pub chat: bool,
    #[arg(long, overrides_with = "chat")]
    pub no_chat: bool,
    /// Retrieval index; built from the training split when omitted
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 9.0)]
    pub fwhm: f64,
    /// JSON report
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Text table; printed to stdout when omitted
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Native or `.nii` volume
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long, value_enum, default_value_t = Axis::Z)]
    pub axis: Axis,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
    Both,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = PrecisionArg::Both)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the per-precision tolerance (1e-6 for f64, 1e-3 for f32)
    #[arg(long)]
    pub tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

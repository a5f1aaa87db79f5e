//! `fsv` — far-field speaker verification toolkit.
//!
//! Single-purpose subcommands for each pipeline stage (feature extraction,
//! WPE, embedder training, scoring utilities, augmentation) plus `run`,
//! which drives a whole experiment from one JSON config.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "fsv",
    version,
    about = "Far-field speaker verification toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract acoustic features from a WAV file into an FSV1 archive
    Extract(ExtractArgs),
    /// Dereverberate a WAV file with single-channel WPE
    Wpe(WpeArgs),
    /// Train a full-covariance GMM-UBM on feature archives
    TrainUbm(TrainUbmArgs),
    /// Train a total-variability matrix on feature archives
    TrainTv(TrainTvArgs),
    /// Extract i-vectors from feature archives into an embedding set
    ExtractIvector(ExtractIvectorArgs),
    /// Train the toy neural embedder on a labeled feature manifest
    TrainEmbedder(TrainEmbedderArgs),
    /// Extract neural embeddings from feature archives into an embedding set
    ExtractEmbedding(ExtractEmbeddingArgs),
    /// Apply adaptive symmetric score normalization to a score file
    Asnorm(AsnormArgs),
    /// Fit logistic calibration on labeled scores and apply it
    Calibrate(CalibrateArgs),
    /// Fuse calibrated subsystem score files
    Fuse(FuseArgs),
    /// Evaluate a score file: EER, minC, actC, Cllr, optional DET plot
    Eval(EvalArgs),
    /// Simulate a room impulse response with the image-source method
    SimulateRir(SimulateRirArgs),
    /// Convolve a RIR into a WAV file and/or mix noise at a target SNR
    Augment(AugmentArgs),
    /// Run a full experiment from a JSON config
    Run(RunArgs),
    /// Print a reference experiment config with every default spelled out
    InitConfig(InitConfigArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Feature kind: mfcc20, mfcc30, pncc, mfbank8k, mfbank16k or gfbank
    #[arg(long, value_parser = commands::parse_kind)]
    kind: fsv_core::dsp::FeatureKind,
    /// Input WAV file
    #[arg(long = "in")]
    input: PathBuf,
    /// Output feature archive (.fsv1)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WpeArgs {
    /// Input WAV file
    #[arg(long = "in")]
    input: PathBuf,
    /// Output WAV file (32-bit float)
    #[arg(long)]
    out: PathBuf,
    /// Prediction filter taps per bin (default 10)
    #[arg(long)]
    taps: Option<usize>,
    /// Prediction delay in STFT frames (default 3)
    #[arg(long)]
    delay: Option<usize>,
    /// Alternation iterations (default 3)
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct TrainUbmArgs {
    /// Feature archives of the training utterances
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Number of full-covariance components
    #[arg(long, default_value_t = 8)]
    components: usize,
    /// EM iterations
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Output model file (.fsvm)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTvArgs {
    /// Feature archives of the training utterances
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Trained GMM-UBM model file
    #[arg(long)]
    ubm: PathBuf,
    /// Total-variability rank
    #[arg(long, default_value_t = 16)]
    rank: usize,
    /// EM iterations
    #[arg(long, default_value_t = 5)]
    iters: usize,
    /// Output model file (.fsvm), containing both the UBM and T
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractIvectorArgs {
    /// i-vector extractor model file (from train-tv)
    #[arg(long)]
    model: PathBuf,
    /// Feature archives; the file stem becomes the utterance id
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Output embedding set (.fsve)
    #[arg(long)]
    out: PathBuf,
    /// Mark the embeddings as extracted from dereverberated audio
    #[arg(long)]
    dereverbed: bool,
    /// Extractor tag stored in the embedding set header
    #[arg(long, default_value = "ivector")]
    tag: String,
}

#[derive(Args)]
struct TrainEmbedderArgs {
    /// Manifest file: one `speaker path.fsv1` pair per line
    #[arg(long)]
    manifest: PathBuf,
    /// Training loss
    #[arg(long, value_enum, default_value_t = commands::LossArg::Softmax)]
    loss: commands::LossArg,
    /// Angular margin for the asoftmax loss
    #[arg(long, default_value_t = 4)]
    margin: u32,
    /// Encoder hidden width
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 16)]
    embed: usize,
    /// Statistics pooling
    #[arg(long, value_enum, default_value_t = commands::PoolingArg::MeanStd)]
    pooling: commands::PoolingArg,
    /// SGD steps
    #[arg(long, default_value_t = 300)]
    steps: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Random seed for init and batch sampling
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output model file (.fsvm)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractEmbeddingArgs {
    /// Embedder model file (from train-embedder)
    #[arg(long)]
    model: PathBuf,
    /// Feature archives; the file stem becomes the utterance id
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Output embedding set (.fsve)
    #[arg(long)]
    out: PathBuf,
    /// Mark the embeddings as extracted from dereverberated audio
    #[arg(long)]
    dereverbed: bool,
    /// Extractor tag stored in the embedding set header
    #[arg(long, default_value = "embedder")]
    tag: String,
}

#[derive(Args)]
struct AsnormArgs {
    /// Raw trial scores (`enroll test score` lines)
    #[arg(long)]
    scores: PathBuf,
    /// Two cohort score tables: enroll-side then test-side. Each line is an
    /// utterance id followed by its raw scores against the cohort.
    #[arg(long = "cohort-scores", num_args = 2, value_names = ["ENROLL", "TEST"])]
    cohort_scores: Vec<PathBuf>,
    /// Number of top cohort scores kept per side
    #[arg(long = "top-x", default_value_t = 10)]
    top_x: usize,
    /// Output score file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Trial scores to calibrate
    #[arg(long)]
    scores: PathBuf,
    /// Trial key with tgt/imp labels
    #[arg(long)]
    key: PathBuf,
    /// Effective target prior
    #[arg(long, default_value_t = 0.01)]
    prior: f64,
    /// Output score file
    #[arg(long)]
    out: PathBuf,
    /// Also write the fitted parameters as JSON {name: {a, b}}
    #[arg(long = "params-out")]
    params_out: Option<PathBuf>,
    /// Subsystem name used in the params file; defaults to the scores stem
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct FuseArgs {
    /// Subsystem score files, fused in the order given
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Calibration parameters JSON {subsystem: {a, b}}, keyed by score file
    /// stem
    #[arg(long)]
    params: PathBuf,
    /// Output score file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trial scores to evaluate
    #[arg(long)]
    scores: PathBuf,
    /// Trial key with tgt/imp labels
    #[arg(long)]
    key: PathBuf,
    /// Target prior for the detection cost
    #[arg(long = "p-target", default_value_t = 0.01)]
    p_target: f64,
    /// Write a DET plot to this SVG file
    #[arg(long)]
    det: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateRirArgs {
    /// Room specification JSON
    #[arg(long)]
    room: PathBuf,
    /// Output WAV file (32-bit float)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input WAV file
    #[arg(long = "in")]
    input: PathBuf,
    /// Room impulse response WAV to convolve with
    #[arg(long)]
    rir: Option<PathBuf>,
    /// Noise WAV to mix in; requires --snr
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Signal-to-noise ratio in dB for --noise
    #[arg(long)]
    snr: Option<f64>,
    /// Output WAV file (32-bit float)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct InitConfigArgs {
    /// Write the config here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Wpe(a) => commands::wpe(a),
        Command::TrainUbm(a) => commands::train_ubm(a),
        Command::TrainTv(a) => commands::train_tv(a),
        Command::ExtractIvector(a) => commands::extract_ivector(a),
        Command::TrainEmbedder(a) => commands::train_embedder(a),
        Command::ExtractEmbedding(a) => commands::extract_embedding(a),
        Command::Asnorm(a) => commands::asnorm(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Eval(a) => commands::eval(a),
        Command::SimulateRir(a) => commands::simulate_rir(a),
        Command::Augment(a) => commands::augment(a),
        Command::Run(a) => commands::run(a),
        Command::InitConfig(a) => commands::init_config(a),
    };
    if let Err(e) = result {
        eprintln!("fsv: {e:#}");
        std::process::exit(1);
    }
}

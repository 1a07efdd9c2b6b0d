//! `cusa`: synthetic data, training, evaluation, gradient checks and batch
//! inspection for the soft-label alignment toolkit.
//!
//! Every command prints one JSON report on stdout. Exit codes: 0 success,
//! 2 usage, 3 I/O, 4 data inconsistency, 5 numeric failure, 6 gradient check
//! failure.

mod commands;
mod error;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cusa_core::parallel::{thread_limit_from_env, with_thread_limit};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "cusa",
    version,
    about = "Soft-label alignment for contrastive image-text retrieval"
)]
struct Cli {
    /// Omit the wall-time field so reports are byte-comparable.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a clustered synthetic dataset.
    Synth(SynthArgs),
    /// Train the student and write a checkpoint plus a JSONL step log.
    Train(TrainArgs),
    /// Score embeddings on cross-modal, uni-modal or STS tasks.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump teacher and student distributions and losses for one batch.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    pairs_per_cluster: Option<usize>,
    /// Extra pairs per cluster written to `<out>/heldout`.
    #[arg(long)]
    holdout_per_cluster: Option<usize>,
    #[arg(long)]
    d_student_img: Option<usize>,
    #[arg(long)]
    d_student_txt: Option<usize>,
    #[arg(long)]
    d_teacher_img: Option<usize>,
    #[arg(long)]
    d_teacher_txt: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    shared_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ObjectiveArg {
    Cusa,
    Infonce,
}

#[derive(Args, Debug, Serialize)]
struct FeatureArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    img_base: PathBuf,
    #[arg(long)]
    txt_base: PathBuf,
    #[arg(long)]
    img_teacher: PathBuf,
    #[arg(long)]
    txt_teacher: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    teacher_inv_temp: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    usa_dim: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Learn a separate temperature for the uni-modal softmaxes.
    #[arg(long)]
    separate_uni_temp: bool,
    #[arg(long, value_enum, default_value = "cusa")]
    objective: ObjectiveArg,
    #[arg(long)]
    out_ckpt: PathBuf,
    #[arg(long)]
    log: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Task {
    Cross,
    Img,
    Txt,
    Sts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ReprArg {
    Main,
    Usa,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Encode base features with a trained checkpoint.
    #[arg(long, conflicts_with_all = ["img_emb", "txt_emb"])]
    ckpt: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    img_base: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    txt_base: Option<PathBuf>,
    /// Precomputed embeddings; rows are L2-normalized on load.
    #[arg(long)]
    img_emb: Option<PathBuf>,
    #[arg(long)]
    txt_emb: Option<PathBuf>,
    /// Ground-truth pairs; each image's relevant texts are its paired ones.
    #[arg(long, conflicts_with = "relevance")]
    pairs: Option<PathBuf>,
    /// Query-to-relevant-ids list, one or both modalities.
    #[arg(long)]
    relevance: Option<PathBuf>,
    /// Scored text pairs for the STS task.
    #[arg(long)]
    sts: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cross")]
    task: Task,
    /// Checkpoint output to score: the retrieval embedding or the uni-modal projector.
    #[arg(long, value_enum, default_value = "main")]
    repr: ReprArg,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Upper bound on every feature and embedding width.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    dims: u64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct InspectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    features: FeatureArgs,
    /// Comma-separated pair indices forming the batch.
    #[arg(long, value_delimiter = ',', required = true)]
    batch: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Defaults to the checkpoint's training value, or 1.
    #[arg(long)]
    teacher_inv_temp: Option<f64>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Initialization seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, conflicts_with = "ckpt")]
    embed_dim: Option<usize>,
    #[arg(long, conflicts_with = "ckpt")]
    usa_dim: Option<usize>,
    /// Also write the batch embeddings as feature files into this directory.
    #[arg(long)]
    export_dir: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = with_thread_limit(thread_limit_from_env(), || commands::run(&cli));
    if let Err(e) = result {
        eprintln!("cusa: {e}");
        std::process::exit(e.exit_code());
    }
}

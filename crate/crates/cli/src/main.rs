use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use petfuse_core::components::Connectivity;
use petfuse_core::metrics::VolumeUnit;
use petfuse_core::postprocess::BoundarySpec;
use petfuse_core::projection::Axis;
use petfuse_core::ErrorKind;

mod commands;

/// Gated PET/CT lesion segmentation pipeline.
#[derive(Debug, Parser)]
#[command(name = "petfuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Z-transform PET, clip-and-scale CT and crop both to the CT foreground.
    Preprocess(PreprocessArgs),
    /// Maximum intensity projection of a volume along one axis.
    Mip(MipArgs),
    /// Remove the largest suprathreshold component (the brain) from a PET volume.
    Debrain(DebrainArgs),
    /// Decide healthy vs diseased for one study from the classifier ensemble.
    Gate(GateArgs),
    /// Average probability maps and binarize.
    Fuse(FuseArgs),
    /// Clear boundary slices and drop near-empty predictions.
    Postprocess(PostprocessArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Grouped, stratified k-fold split of a study roster.
    Split(SplitArgs),
    /// Run the whole pipeline over a directory of studies.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    pet: PathBuf,
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    label: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
    /// Clip percentiles for CT, as LOW,HIGH.
    #[arg(long, default_value = "0.5,99.5")]
    percentiles: String,
    #[arg(long, default_value_t = petfuse_core::preprocess::DEFAULT_CROP_THRESHOLD)]
    crop_threshold: f32,
}

#[derive(Debug, Args)]
struct MipArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    axis: Axis,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct DebrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = petfuse_core::projection::DEFAULT_SUV_THRESHOLD)]
    debrain_threshold: f32,
    #[arg(long, default_value_t = Connectivity::default())]
    connectivity: Connectivity,
}

#[derive(Debug, Args)]
struct ClassifierArgs {
    /// CSV of study_id,classifier_id,probability.
    #[arg(long, conflicts_with = "weights")]
    scores: Option<PathBuf>,
    /// JSON weights of the baseline MIP classifiers.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GateArgs {
    #[arg(long)]
    pet: PathBuf,
    /// Study id used to look up scores; defaults to the PET file's directory name.
    #[arg(long)]
    study: Option<String>,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long, default_value_t = petfuse_core::gating::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = petfuse_core::projection::DEFAULT_SUV_THRESHOLD)]
    debrain_threshold: f32,
    #[arg(long, default_value_t = Connectivity::default())]
    connectivity: Connectivity,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Probability volume; repeat once per model.
    #[arg(long = "prob", required = true)]
    probs: Vec<PathBuf>,
    /// Comma-separated weights, one per --prob.
    #[arg(long)]
    fusion_weights: Option<String>,
    #[arg(long, default_value_t = petfuse_core::inference::DEFAULT_BINARIZE_THRESHOLD)]
    binarize_threshold: f32,
    /// Output mask.
    #[arg(long)]
    output: PathBuf,
    /// Also write the fused probabilities here.
    #[arg(long)]
    prob_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// slices:LOW,HIGH or percent:P
    #[arg(long, default_value = "slices:0,0")]
    boundary: BoundarySpec,
    #[arg(long, default_value_t = petfuse_core::postprocess::DEFAULT_MIN_VOXELS)]
    min_voxels: usize,
    /// Drop small components individually instead of the whole-mask rule.
    #[arg(long)]
    per_component: bool,
    #[arg(long, default_value_t = Connectivity::default())]
    connectivity: Connectivity,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of <study>/gt volumes.
    #[arg(long)]
    input_dir: PathBuf,
    /// Directory of <study>/pred volumes; defaults to --input-dir.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    #[arg(long, default_value_t = Connectivity::default())]
    connectivity: Connectivity,
    #[arg(long, default_value_t = VolumeUnit::default())]
    volume_unit: VolumeUnit,
    /// Split file written by `split`; needs --records.
    #[arg(long, requires = "records")]
    split: Option<PathBuf>,
    #[arg(long, requires = "split")]
    records: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// CSV with study_id,patient_id,sex,diagnosis.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = petfuse_core::splits::DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    debrain_threshold: Option<f32>,
    #[arg(long)]
    connectivity: Option<Connectivity>,
    #[arg(long)]
    fusion_weights: Option<String>,
    #[arg(long)]
    binarize_threshold: Option<f32>,
    #[arg(long)]
    boundary: Option<BoundarySpec>,
    #[arg(long)]
    min_voxels: Option<usize>,
    #[arg(long)]
    volume_unit: Option<VolumeUnit>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

/// Exit status for errors from the core library.
fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<petfuse_core::Error>())
        .map(petfuse_core::Error::kind);
    match kind {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Io) => 3,
        Some(ErrorKind::Contract) => 4,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PETFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Mip(a) => commands::mip(a),
        Command::Debrain(a) => commands::debrain(a),
        Command::Gate(a) => commands::gate(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Postprocess(a) => commands::postprocess(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Split(a) => commands::split(a),
        Command::Run(a) => commands::run(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

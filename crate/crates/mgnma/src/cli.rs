//! Command-line driver.
//!
//! Every subcommand writes its artifacts plus a resolved `config.json`
//! snapshot, prints one JSON summary line on success, and on failure prints
//! one JSON error line to stderr and exits with
//!
//! | code | meaning |
//! |---|---|
//! | 2 | unknown flag, bad flag value or invalid configuration |
//! | 3 | missing input: file, split, modality or video |
//! | 4 | numerical abort or failed gradient check |
//! | 1 | anything else |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgnma_core::eval::{ensemble, evaluate};
use mgnma_core::features::{Modality, Split, VideoRecord};
use mgnma_core::fusion::FusionKind;
use mgnma_core::gradcheck::gradient_suite;
use mgnma_core::synth::{generate, SynthSpec};
use mgnma_core::trainer::{predict, train, TrainConfig};
use mgnma_core::video_level::{export_video_features, train_video_level, VideoLevelConfig};
use serde::Serialize;
use serde_json::json;

use crate::ablation::{heads_markdown, ladder_markdown, run_heads, run_ladder, Study, VideoSource};
use crate::checkpoint::{self, AnyModel};
use crate::config::{read_config_file, resolve, Overrides};
use crate::error::{Error, Result};
use crate::manifest::{add_tracks, load_dataset, write_dataset, write_json};
use crate::report::{read_predictions, write_predictions, write_report};

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Parser, Debug)]
#[command(name = "mgnma", version, about = "Multi-granularity modal-attention dense affect prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with planted signal.
    Synth(SynthArgs),
    /// Train the video-level network.
    TrainVideo(TrainVideoArgs),
    /// Export video_theme tracks from a video-level checkpoint into a dataset.
    ExportVideo(ExportVideoArgs),
    /// Train the frame-level model.
    Train(TrainArgs),
    /// Write per-frame predictions for a split.
    Predict(PredictArgs),
    /// Score predictions against labels.
    Eval(EvalArgs),
    /// Average several prediction directories.
    Ensemble(EnsembleArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Run multi-seed ablations on synthetic data.
    Ablate(AblateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Desk-scale sizes.
    Small,
    /// Reference dimensions and the full training protocol.
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

impl SplitArg {
    fn select(self, videos: &[VideoRecord]) -> Vec<&VideoRecord> {
        let want = match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Validation => Some(Split::Validation),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        };
        videos.iter().filter(|v| want.is_none_or(|s| v.split() == s)).collect()
    }

    fn require(self, videos: &[VideoRecord]) -> Result<Vec<&VideoRecord>> {
        let selected = self.select(videos);
        if selected.is_empty() {
            let split = match self {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                _ => Split::Validation,
            };
            return Err(mgnma_core::Error::MissingSplit(split).into());
        }
        Ok(selected)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionArg {
    Attention,
    Concat,
}

impl From<FusionArg> for FusionKind {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Attention => FusionKind::Attention,
            FusionArg::Concat => FusionKind::Concat,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "small")]
    pub preset: Preset,
    /// JSON file with SynthSpec fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub noise_floor: Option<f64>,
    #[arg(long)]
    pub salience: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainVideoArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "small")]
    pub preset: Preset,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub pooled_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub modal_dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExportVideoArgs {
    /// Manifest to update in place.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint directory, or a run directory containing one.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "small")]
    pub preset: Preset,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated, in fusion order.
    #[arg(long, value_delimiter = ',')]
    pub modalities: Option<Vec<String>>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub fused_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub modal_dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint directory, or a run directory containing one.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitArg,
    /// Directory for the JSON and CSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Prediction directories to average.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyArg {
    /// Modality ladder.
    Ladder,
    /// MLP vs MOE vs MAF+MOE and the seed ensemble.
    Heads,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoSourceArg {
    Synthetic,
    Pipeline,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "ladder")]
    pub study: StudyArg,
    /// JSON file with Study fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, starting at --first-seed.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub video_source: Option<VideoSourceArg>,
}

fn load_file_layer(path: &Option<PathBuf>) -> Result<Option<serde_json::Value>> {
    path.as_deref().map(read_config_file).transpose()
}

fn snapshot<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    write_json(value, &dir.join(CONFIG_SNAPSHOT))
}

/// A checkpoint directory, or the `checkpoint/` inside a run directory.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(checkpoint::INDEX_FILE).is_file() {
        nested
    } else {
        path.to_owned()
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<serde_json::Value> {
    let defaults = match a.preset {
        Preset::Small => SynthSpec::small(),
        Preset::Full => SynthSpec::default(),
    };
    let mut o = Overrides::default();
    o.set("seed", a.seed)?
        .set("n_videos", a.n_videos)?
        .set("frames_per_video", a.frames)?
        .set("noise_floor", a.noise_floor)?
        .set("salience", a.salience)?
        .set("validation_fraction", a.validation_fraction)?;
    let spec: SynthSpec = resolve(&defaults, load_file_layer(&a.config)?.as_ref(), o.into_map())?;
    let dataset = generate(&spec)?;
    let manifest = write_dataset(&dataset, &a.out)?;
    snapshot(&a.out, &spec)?;
    Ok(json!({"command": "synth", "manifest": manifest, "videos": dataset.videos.len()}))
}

fn cmd_train_video(a: &TrainVideoArgs) -> Result<serde_json::Value> {
    let defaults = match a.preset {
        Preset::Small => VideoLevelConfig::small(),
        Preset::Full => VideoLevelConfig::default(),
    };
    let mut o = Overrides::default();
    o.set("seed", a.seed)?
        .set("epochs", a.epochs)?
        .set("learning_rate", a.learning_rate)?
        .set("batch_size", a.batch_size)?
        .set("frames", a.frames)?
        .set("clusters", a.clusters)?
        .set("pooled_dim", a.pooled_dim)?
        .set("embed_dim", a.embed_dim)?
        .set("modal_dropout", a.modal_dropout)?;
    let config: VideoLevelConfig = resolve(&defaults, load_file_layer(&a.config)?.as_ref(), o.into_map())?;
    config.validate()?;
    let (_, dataset) = load_dataset(&a.manifest)?;
    snapshot(&a.run_dir, &config)?;
    let outcome = train_video_level(&dataset, &config)?;
    let mut model = AnyModel::VideoLevel(outcome.model);
    checkpoint::save(&a.run_dir.join(CHECKPOINT_DIR), &mut model, Some(&outcome.optimizer))?;
    write_json(&outcome.report, &a.run_dir.join(TRAIN_REPORT))?;
    Ok(json!({
        "command": "train-video",
        "best_epoch": outcome.report.best_epoch,
        "best_validation_correlation": outcome.report.best_validation_correlation,
    }))
}

fn cmd_export_video(a: &ExportVideoArgs) -> Result<serde_json::Value> {
    let ckpt = checkpoint::load(&checkpoint_dir(&a.checkpoint))?;
    let AnyModel::VideoLevel(mut model) = ckpt.model else {
        return Err(Error::Checkpoint(String::from("export-video needs a video-level checkpoint")));
    };
    let (_, dataset) = load_dataset(&a.manifest)?;
    let tracks = export_video_features(&mut model, &dataset.videos)?;
    add_tracks(&a.manifest, &tracks)?;
    Ok(json!({"command": "export-video", "videos": tracks.len(), "dim": model.embed_dim()}))
}

fn cmd_train(a: &TrainArgs) -> Result<serde_json::Value> {
    let defaults = match a.preset {
        Preset::Small => TrainConfig::small(),
        Preset::Full => TrainConfig::default(),
    };
    let modalities = a
        .modalities
        .as_ref()
        .map(|list| list.iter().map(|s| s.trim().parse::<Modality>()).collect::<mgnma_core::Result<Vec<_>>>())
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut o = Overrides::default();
    o.set("seed", a.seed)?
        .set("epochs", a.epochs)?
        .set("learning_rate", a.learning_rate)?
        .set("batch_size", a.batch_size)?
        .set("modalities", modalities)?
        .set("experts", a.experts)?
        .set("hidden", a.hidden)?
        .set("fused_dim", a.fused_dim)?
        .set("fusion", a.fusion.map(FusionKind::from))?
        .set("modal_dropout", a.modal_dropout)?;
    let config: TrainConfig = resolve(&defaults, load_file_layer(&a.config)?.as_ref(), o.into_map())?;
    config.validate()?;
    let (_, dataset) = load_dataset(&a.manifest)?;
    snapshot(&a.run_dir, &config)?;
    let outcome = train(&dataset, &config)?;
    let mut model = AnyModel::Frame(outcome.model);
    checkpoint::save(&a.run_dir.join(CHECKPOINT_DIR), &mut model, Some(&outcome.optimizer))?;
    write_json(&outcome.report, &a.run_dir.join(TRAIN_REPORT))?;
    Ok(json!({
        "command": "train",
        "best_epoch": outcome.report.best_epoch,
        "best_validation_correlation": outcome.report.best_validation_correlation,
        "steps": outcome.report.steps,
    }))
}

fn cmd_predict(a: &PredictArgs) -> Result<serde_json::Value> {
    let ckpt = checkpoint::load(&checkpoint_dir(&a.checkpoint))?;
    let AnyModel::Frame(mut model) = ckpt.model else {
        return Err(Error::Checkpoint(String::from("predict needs a frame-level checkpoint")));
    };
    let (_, dataset) = load_dataset(&a.manifest)?;
    let videos = a.split.require(&dataset.videos)?;
    let preds = predict(&mut model, videos)?;
    write_predictions(&preds, &a.out)?;
    snapshot(
        &a.out,
        &json!({"manifest": a.manifest, "checkpoint": a.checkpoint, "split": format!("{:?}", a.split).to_lowercase()}),
    )?;
    Ok(json!({"command": "predict", "videos": preds.len()}))
}

fn cmd_eval(a: &EvalArgs) -> Result<serde_json::Value> {
    let (_, dataset) = load_dataset(&a.manifest)?;
    let preds = read_predictions(&a.predictions)?;
    let videos = a.split.require(&dataset.videos)?;
    let report = evaluate(&preds, videos)?;
    if let Some(out) = &a.out {
        write_report(&report, out)?;
        snapshot(
            out,
            &json!({"manifest": a.manifest, "predictions": a.predictions, "split": format!("{:?}", a.split).to_lowercase()}),
        )?;
    }
    Ok(json!({
        "command": "eval",
        "overall": report.overall,
        "videos": report.videos.len(),
        "degenerate_pairs": report.degenerate_pairs,
    }))
}

fn cmd_ensemble(a: &EnsembleArgs) -> Result<serde_json::Value> {
    let sets = a.inputs.iter().map(|d| read_predictions(d)).collect::<Result<Vec<_>>>()?;
    let merged = ensemble(&sets)?;
    write_predictions(&merged, &a.out)?;
    snapshot(&a.out, &json!({"inputs": a.inputs}))?;
    Ok(json!({"command": "ensemble", "models": sets.len(), "videos": merged.len()}))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<serde_json::Value> {
    let results = gradient_suite(a.seed)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, r)| !r.passed)
        .map(|(n, r)| match &r.worst {
            Some((param, i)) => format!("{n} (rel. error {:.3e} at {param}[{i}])", r.max_rel_error),
            None => format!("{n} (rel. error {:.3e})", r.max_rel_error),
        })
        .collect();
    let detail: serde_json::Map<String, serde_json::Value> = results
        .iter()
        .map(|(n, r)| ((*n).to_owned(), json!({"max_rel_error": r.max_rel_error, "checked": r.checked, "passed": r.passed})))
        .collect();
    if !failed.is_empty() {
        return Err(Error::GradCheck(failed.join(", ")));
    }
    Ok(json!({"command": "gradcheck", "passed": true, "fragments": detail}))
}


fn cmd_ablate(a: &AblateArgs) -> Result<serde_json::Value> {
    let mut o = Overrides::default();
    if let Some(n) = a.seeds {
        o.set("seeds", Some((a.first_seed..a.first_seed + n).collect::<Vec<_>>()))?;
    } else if a.first_seed != 0 {
        o.set("seeds", Some((a.first_seed..a.first_seed + 5).collect::<Vec<_>>()))?;
    }
    let mut study: Study = resolve(&Study::small(), load_file_layer(&a.config)?.as_ref(), o.into_map())?;
    if let Some(e) = a.epochs {
        study.train.epochs = e;
    }
    match a.video_source {
        Some(VideoSourceArg::Synthetic) => study.video = VideoSource::Synthetic,
        Some(VideoSourceArg::Pipeline) => {
            study.video = VideoSource::Pipeline {
                config: VideoLevelConfig::small(),
            }
        }
        None => {}
    }
    study.train.validate()?;
    snapshot(&a.out, &study)?;
    let mut summary = json!({"command": "ablate"});
    let mut markdown = String::new();
    if matches!(a.study, StudyArg::Ladder | StudyArg::Both) {
        let report = run_ladder(&study)?;
        write_json(&report, &a.out.join("ladder.json"))?;
        markdown.push_str("## Modality ladder\n\n");
        markdown.push_str(&ladder_markdown(&report));
        summary["ladder"] = json!({
            "means": report.rows.iter().map(|r| r.mean).collect::<Vec<_>>(),
            "nondecreasing_seeds": report.nondecreasing_seeds,
            "full_minus_image": report.full_minus_image,
        });
    }
    if matches!(a.study, StudyArg::Heads | StudyArg::Both) {
        let report = run_heads(&study)?;
        write_json(&report, &a.out.join("heads.json"))?;
        if !markdown.is_empty() {
            markdown.push('\n');
        }
        markdown.push_str("## Classifier heads\n\n");
        markdown.push_str(&heads_markdown(&report));
        summary["heads"] = json!({
            "means": report.rows.iter().map(|r| (r.label.clone(), r.mean)).collect::<Vec<_>>(),
            "ensemble_wins": report.ensemble_wins,
        });
    }
    crate::format::write_bytes(&a.out.join("ablation.md"), markdown.as_bytes())?;
    eprint!("{markdown}");
    Ok(summary)
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        "config" => 2,
        "not_found" | "missing_modality" | "missing_split" | "missing_video" => 3,
        "numerical_abort" | "gradcheck" => 4,
        _ => 1,
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({"status": "error", "kind": kind, "message": message}).to_string()
}

fn dispatch(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainVideo(a) => cmd_train_video(a),
        Command::ExportVideo(a) => cmd_export_video(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Runs the CLI, writing to the given streams; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let _ = writeln!(stderr, "{}", error_line("usage", first));
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{}", json!({"status": "ok", "result": summary}));
            0
        }
        Err(err) => {
            let _ = writeln!(stderr, "{}", error_line(err.kind(), &err.to_string()));
            exit_code(&err)
        }
    }
}

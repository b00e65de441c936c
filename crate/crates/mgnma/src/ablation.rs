//! Multi-seed experiments on synthetic data: the modality ladder and the
//! classifier-head comparison with a seed ensemble.
//!
//! Every seed generates its own dataset (`SynthSpec::seed = seed`) and trains
//! with the same seed, so a row is reproducible from the seed alone.

use mgnma_core::eval::{ensemble, evaluate, PredictionSet};
use mgnma_core::features::{Dataset, Modality, Split};
use mgnma_core::fusion::FusionKind;
use mgnma_core::synth::{generate, SynthSpec};
use mgnma_core::trainer::{predict, train, TrainConfig};
use mgnma_core::video_level::{export_video_features, train_video_level, VideoLevelConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Where the `video_theme` track of the last rung comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum VideoSource {
    /// The generator's own theme track.
    Synthetic,
    /// Embeddings exported by a video-level network trained on the same split.
    Pipeline { config: VideoLevelConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub video: VideoSource,
    /// Models per ensemble trial.
    pub ensemble_size: usize,
}

impl Study {
    pub fn small() -> Self {
        Self {
            synth: SynthSpec::small(),
            train: TrainConfig::small(),
            seeds: (0..5).collect(),
            video: VideoSource::Pipeline {
                config: VideoLevelConfig::small(),
            },
            ensemble_size: 5,
        }
    }

    /// The dataset of one seed, with exported theme embeddings if requested.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        let mut ds = generate(&SynthSpec {
            seed,
            ..self.synth.clone()
        })?;
        if let VideoSource::Pipeline { config } = &self.video {
            let cfg = VideoLevelConfig {
                seed,
                ..config.clone()
            };
            let mut outcome = train_video_level(&ds, &cfg)?;
            for (id, track) in export_video_features(&mut outcome.model, &ds.videos)? {
                if let Some(v) = ds.get_mut(&id) {
                    v.insert_track(track)?;
                }
            }
        }
        Ok(ds)
    }

    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    /// One best-snapshot validation correlation per seed.
    pub correlations: Vec<f64>,
    pub mean: f64,
}

impl Row {
    fn new(label: impl Into<String>, correlations: Vec<f64>) -> Self {
        let mean = correlations.iter().sum::<f64>() / correlations.len().max(1) as f64;
        Self {
            label: label.into(),
            correlations,
            mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
    /// Seeds whose correlations never drop along the ladder.
    pub nondecreasing_seeds: usize,
    /// Mean of (full − image only) over seeds.
    pub full_minus_image: f64,
}

pub fn ladder_labels() -> Vec<String> {
    Modality::LADDER
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let name = if *m == Modality::VideoTheme { "video" } else { m.as_str() };
            if i == 0 {
                name.to_owned()
            } else {
                format!("+{name}")
            }
        })
        .collect()
}

pub fn run_ladder(study: &Study) -> Result<LadderReport> {
    let rungs = Modality::LADDER.len();
    let mut table = vec![Vec::with_capacity(study.seeds.len()); rungs];
    for &seed in &study.seeds {
        let ds = study.dataset(seed)?;
        for (k, column) in table.iter_mut().enumerate() {
            let cfg = TrainConfig {
                modalities: Modality::LADDER[..=k].to_vec(),
                ..study.config(seed)
            };
            column.push(train(&ds, &cfg)?.report.best_validation_correlation);
        }
    }
    let n = study.seeds.len();
    let nondecreasing_seeds = (0..n)
        .filter(|&s| (1..rungs).all(|k| table[k][s] >= table[k - 1][s]))
        .count();
    let full_minus_image = (0..n).map(|s| table[rungs - 1][s] - table[0][s]).sum::<f64>() / n.max(1) as f64;
    let rows = ladder_labels().into_iter().zip(table).map(|(l, c)| Row::new(l, c)).collect();
    Ok(LadderReport {
        seeds: study.seeds.clone(),
        rows,
        nondecreasing_seeds,
        full_minus_image,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTrial {
    pub seed: u64,
    pub members: Vec<f64>,
    pub member_mean: f64,
    pub ensemble: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadsReport {
    pub seeds: Vec<u64>,
    /// MLP (concat, 1 expert), MOE (concat), MAF+MOE.
    pub rows: Vec<Row>,
    pub trials: Vec<EnsembleTrial>,
    /// Trials where the ensemble is at least the mean member score.
    pub ensemble_wins: usize,
}

/// Seed of ensemble member `k` in the trial of `seed`; member 0 reuses the seed.
pub fn member_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(1_000 * k as u64)
}

pub fn run_heads(study: &Study) -> Result<HeadsReport> {
    let mut mlp = Vec::new();
    let mut moe = Vec::new();
    let mut maf = Vec::new();
    let mut trials = Vec::new();
    for &seed in &study.seeds {
        let ds = study.dataset(seed)?;
        let val: Vec<_> = ds.split(Split::Validation).collect();
        let base = study.config(seed);
        let concat = TrainConfig {
            fusion: FusionKind::Concat,
            ..base.clone()
        };
        mlp.push(train(&ds, &TrainConfig { experts: 1, ..concat.clone() })?.report.best_validation_correlation);
        moe.push(train(&ds, &concat)?.report.best_validation_correlation);

        let attention = TrainConfig {
            fusion: FusionKind::Attention,
            ..base
        };
        let mut members = Vec::with_capacity(study.ensemble_size);
        let mut sets: Vec<PredictionSet> = Vec::with_capacity(study.ensemble_size);
        for k in 0..study.ensemble_size {
            let cfg = TrainConfig {
                seed: member_seed(seed, k),
                ..attention.clone()
            };
            let mut outcome = train(&ds, &cfg)?;
            members.push(outcome.report.best_validation_correlation);
            sets.push(predict(&mut outcome.model, val.iter().copied())?);
        }
        maf.push(members[0]);
        let ensemble_score = evaluate(&ensemble(&sets)?, val.iter().copied())?.overall;
        let member_mean = members.iter().sum::<f64>() / members.len() as f64;
        trials.push(EnsembleTrial {
            seed,
            members,
            member_mean,
            ensemble: ensemble_score,
        });
    }
    let ensemble_wins = trials.iter().filter(|t| t.ensemble >= t.member_mean).count();
    Ok(HeadsReport {
        seeds: study.seeds.clone(),
        rows: vec![Row::new("MLP", mlp), Row::new("MOE", moe), Row::new("MAF+MOE", maf)],
        trials,
        ensemble_wins,
    })
}

fn seed_header(seeds: &[u64]) -> String {
    let mut out = String::from("| features |");
    for s in seeds {
        out.push_str(&format!(" seed {s} |"));
    }
    out.push_str(" mean |\n|---|");
    for _ in seeds {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    out
}

fn row_line(row: &Row) -> String {
    let mut out = format!("| {} |", row.label);
    for r in &row.correlations {
        out.push_str(&format!(" {r:.5} |"));
    }
    out.push_str(&format!(" {:.5} |\n", row.mean));
    out
}

/// Markdown table with one row per rung.
pub fn ladder_markdown(report: &LadderReport) -> String {
    let mut out = seed_header(&report.seeds);
    for row in &report.rows {
        out.push_str(&row_line(row));
    }
    out.push_str(&format!(
        "\nnondecreasing in {}/{} seeds; full − image = {:.5}\n",
        report.nondecreasing_seeds,
        report.seeds.len(),
        report.full_minus_image
    ));
    out
}

pub fn heads_markdown(report: &HeadsReport) -> String {
    let mut out = seed_header(&report.seeds).replacen("features", "method", 1);
    for row in &report.rows {
        out.push_str(&row_line(row));
    }
    let ens = Row::new("Ensemble", report.trials.iter().map(|t| t.ensemble).collect());
    out.push_str(&row_line(&ens));
    out.push_str(&format!(
        "\nensemble ≥ mean member in {}/{} trials\n",
        report.ensemble_wins,
        report.trials.len()
    ));
    out
}

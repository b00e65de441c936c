//! Mini-batch training of the frame-level model.
//!
//! Frames of all training videos are pooled and reshuffled every epoch.
//! Each batch runs fusion and the MOE head in train mode, the mean binary
//! cross-entropy against the frame labels, backward, and one Adam step.
//! After every epoch the model is scored on the validation split and the
//! best-scoring snapshot (earliest on ties) is returned.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, PredictionSet};
use crate::features::{Dataset, Modality, Split, VideoRecord};
use crate::fusion::FusionKind;
use crate::model::{gather_frames, FrameModel, FrameModelConfig};
use crate::nn::{bce_loss, Adam, AdamConfig, Mode, Module};
use crate::NUM_CLASSES;

/// Independent random streams derived from one seed.
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub fused_dim: usize,
    pub experts: usize,
    pub hidden: usize,
    pub modal_dropout: f64,
    pub fusion: FusionKind,
}

impl Default for TrainConfig {
    /// Full-scale protocol: Adam at 1e-4, batches of 1536, 30 epochs,
    /// 1024-d fused feature, 3 experts.
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1536,
            epochs: 30,
            seed: 0,
            modalities: Modality::LADDER.to_vec(),
            fused_dim: 1024,
            experts: 3,
            hidden: 1024,
            modal_dropout: 0.25,
            fusion: FusionKind::Attention,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings sized for the small synthetic preset.
    pub fn small() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            fused_dim: 64,
            hidden: 64,
            modal_dropout: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(String::from("batch_size must be at least 2")));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig(String::from("epochs must be at least 1")));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig(String::from("at least one modality is required")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(String::from("learning_rate must be positive")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_correlation: Vec<f64>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_validation_correlation: f64,
    pub steps: u64,
}

pub struct TrainOutcome {
    pub model: FrameModel<f32>,
    /// Optimizer state at the returned snapshot.
    pub optimizer: Adam<f32>,
    pub report: TrainReport,
}

/// Builds an untrained model whose modality dims come from `reference`.
pub fn build_model(reference: &VideoRecord, config: &TrainConfig) -> Result<FrameModel<f32>> {
    let dims = config
        .modalities
        .iter()
        .map(|m| reference.track(m).map(|t| t.dim()))
        .collect::<Result<Vec<_>>>()?;
    let model_config = FrameModelConfig {
        modalities: config.modalities.clone(),
        dims,
        fused_dim: config.fused_dim,
        modal_dropout: config.modal_dropout,
        fusion: config.fusion,
        experts: config.experts,
        hidden: config.hidden,
    };
    let mut rng = stream_rng(config.seed, streams::INIT);
    FrameModel::new(model_config, &mut rng)
}

/// Eval-mode predictions for every given video.
pub fn predict<'a>(
    model: &mut FrameModel<f32>,
    videos: impl IntoIterator<Item = &'a VideoRecord>,
) -> Result<PredictionSet> {
    let mut out = BTreeMap::new();
    for v in videos {
        out.insert(String::from(v.video_id()), model.predict_video(v)?);
    }
    Ok(out)
}

/// Scores a model on a list of videos.
pub fn validate(model: &mut FrameModel<f32>, videos: &[&VideoRecord]) -> Result<EvalReport> {
    let preds = predict(model, videos.iter().copied())?;
    evaluate(&preds, videos.iter().copied())
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &mut FrameModel<f32>,
    optimizer: &mut Adam<f32>,
    batch: &[(&VideoRecord, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (inputs, labels) = gather_frames::<f32>(batch, &model.config().modalities.clone())?;
    model.zero_grad();
    let probs = model.forward(&inputs, Mode::Train, rng)?;
    let (loss, grad) = bce_loss(&probs, &labels)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    model.backward(&grad)?;
    optimizer.step(model)?;
    Ok(loss)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let train_videos = dataset.require_split(Split::Train)?;
    let val_videos = dataset.require_split(Split::Validation)?;
    for v in train_videos.iter().chain(&val_videos) {
        for m in &config.modalities {
            v.track(m)?;
        }
        if v.labels().dim() != NUM_CLASSES {
            return Err(Error::InvalidConfig(String::from("label tracks must have 15 classes")));
        }
    }

    let mut model = build_model(train_videos[0], config)?;
    let mut optimizer = Adam::new(config.adam());
    let mut shuffle_rng = stream_rng(config.seed, streams::SHUFFLE);
    let mut dropout_rng = stream_rng(config.seed, streams::DROPOUT);

    let mut pool: Vec<(&VideoRecord, usize)> = train_videos
        .iter()
        .flat_map(|v| (0..v.frames()).map(move |t| (*v, t)))
        .collect();

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        validation_correlation: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_validation_correlation: f64::NEG_INFINITY,
        steps: 0,
    };
    let mut best: Option<(FrameModel<f32>, Adam<f32>)> = None;

    for epoch in 1..=config.epochs {
        pool.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in pool.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let loss = train_step(&mut model, &mut optimizer, batch, &mut dropout_rng)?;
            report.steps += 1;
            if !loss.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch,
                    step: report.steps as usize,
                    loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        report.train_loss.push(loss_sum / seen.max(1) as f64);

        let corr = validate(&mut model, &val_videos)?.overall;
        report.validation_correlation.push(corr);
        if corr > report.best_validation_correlation {
            report.best_validation_correlation = corr;
            report.best_epoch = epoch;
            best = Some((model.clone(), optimizer.clone()));
        }
    }

    let (model, optimizer) = match best {
        Some(b) => b,
        // every validation score was NaN
        None => return Err(Error::NumericalAbort { epoch: config.epochs, step: report.steps as usize, loss: f64::NAN }),
    };
    Ok(TrainOutcome {
        model,
        optimizer,
        report,
    })
}

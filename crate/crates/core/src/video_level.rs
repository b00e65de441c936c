//! Video-level expression network.
//!
//! Eighty uniformly sampled image and audio frames are pooled by separate
//! NetVLAD layers, fused with the title embedding by modal attention fusion,
//! then batch-normalized and rectified. That hidden layer is the exported
//! video theme embedding; a final dense layer with sigmoid predicts the
//! video's frame-averaged labels.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::pearson;
use crate::features::{uniform_subsample, Dataset, FeatureTrack, Modality, Rate, Split, VideoRecord};
use crate::fusion::{FusionConfig, FusionKind, ModalFusion};
use crate::model::NoRng;
use crate::netvlad::{NetVlad, NetVladConfig};
use crate::nn::{bce_loss, join, relu, relu_backward, sigmoid, sigmoid_backward, Adam, AdamConfig, BatchNorm, Dense, Mode, Module, Slot};
use crate::tensor::{Matrix, Real};
use crate::trainer::{stream_rng, streams, TrainReport};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoLevelConfig {
    /// Frames sampled per video for each of image and audio.
    pub frames: usize,
    pub clusters: usize,
    pub pooled_dim: usize,
    pub embed_dim: usize,
    pub modal_dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for VideoLevelConfig {
    fn default() -> Self {
        Self {
            frames: 80,
            clusters: 8,
            pooled_dim: 1024,
            embed_dim: 1024,
            modal_dropout: 0.0,
            learning_rate: 1e-4,
            batch_size: 1536,
            epochs: 30,
            seed: 0,
        }
    }
}

impl VideoLevelConfig {
    pub fn small() -> Self {
        Self {
            clusters: 4,
            pooled_dim: 32,
            embed_dim: 32,
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 60,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.epochs == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig(String::from("frames, epochs and embed_dim must be positive")));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(String::from("batch_size must be at least 2")));
        }
        Ok(())
    }
}

/// Network inputs of one video: sampled image and audio frames and the title row.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInputs<T> {
    pub image: Matrix<T>,
    pub audio: Matrix<T>,
    pub title: Vec<T>,
}

impl<T: Real> VideoInputs<T> {
    pub fn from_record(record: &VideoRecord, frames: usize) -> Result<Self> {
        let sample = |m: &Modality, n: usize| -> Result<Matrix<T>> {
            Ok(uniform_subsample(record.track(m)?, n)?.values().cast())
        };
        Ok(Self {
            image: sample(&Modality::Image, frames)?,
            audio: sample(&Modality::Audio, frames)?,
            title: sample(&Modality::Title, 1)?.into_data(),
        })
    }
}

/// Per-class mean of a `T×classes` label matrix.
pub fn video_target(labels: &Matrix<f32>) -> Vec<f32> {
    let t = labels.rows().max(1) as f64;
    (0..labels.cols())
        .map(|c| ((0..labels.rows()).map(|r| labels.get(r, c) as f64).sum::<f64>() / t) as f32)
        .collect()
}

#[derive(Clone, Debug)]
struct Cache<T> {
    pre_activation: Matrix<T>,
    probs: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct VideoLevelModel<T> {
    config: VideoLevelConfig,
    pub image_pool: NetVlad<T>,
    pub audio_pool: NetVlad<T>,
    pub fusion: ModalFusion<T>,
    pub norm: BatchNorm<T>,
    pub output: Dense<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> VideoLevelModel<T> {
    pub fn new<R: Rng + ?Sized>(
        config: VideoLevelConfig,
        image_dim: usize,
        audio_dim: usize,
        title_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let pool = |dim| NetVladConfig {
            dim,
            clusters: config.clusters,
            pooled_dim: config.pooled_dim,
        };
        let image_pool = NetVlad::new(pool(image_dim), rng)?;
        let audio_pool = NetVlad::new(pool(audio_dim), rng)?;
        let fusion = ModalFusion::new(
            FusionConfig {
                dims: alloc::vec![config.pooled_dim, config.pooled_dim, title_dim],
                fused_dim: config.embed_dim,
                modal_dropout: config.modal_dropout,
                kind: FusionKind::Attention,
            },
            rng,
        )?;
        let norm = BatchNorm::new(config.embed_dim);
        let output = Dense::new(config.embed_dim, NUM_CLASSES, rng);
        Ok(Self {
            config,
            image_pool,
            audio_pool,
            fusion,
            norm,
            output,
            cache: None,
        })
    }

    pub fn config(&self) -> &VideoLevelConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn hidden<R: Rng + ?Sized>(&mut self, batch: &[VideoInputs<T>], mode: Mode, rng: &mut R) -> Result<Matrix<T>> {
        let images: Vec<Matrix<T>> = batch.iter().map(|b| b.image.clone()).collect();
        let audios: Vec<Matrix<T>> = batch.iter().map(|b| b.audio.clone()).collect();
        let titles: Vec<&[T]> = batch.iter().map(|b| b.title.as_slice()).collect();
        let pooled_image = self.image_pool.forward(&images)?;
        let pooled_audio = self.audio_pool.forward(&audios)?;
        let titles = Matrix::from_rows(&titles)?;
        let fused = self.fusion.forward(&[pooled_image, pooled_audio, titles], mode, rng)?;
        let pre = self.norm.forward(&fused.fused, mode)?;
        let hidden = relu(&pre);
        self.cache = Some(Cache {
            pre_activation: pre,
            probs: Matrix::zeros(0, 0),
        });
        Ok(hidden)
    }

    /// The exported embedding: eval-mode hidden activations, `B×embed_dim`.
    pub fn embed(&mut self, batch: &[VideoInputs<T>]) -> Result<Matrix<T>> {
        self.hidden(batch, Mode::Eval, &mut NoRng)
    }

    /// Predicted averaged labels, `B×classes`.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &[VideoInputs<T>], mode: Mode, rng: &mut R) -> Result<Matrix<T>> {
        let hidden = self.hidden(batch, mode, rng)?;
        let probs = self.output.forward(&hidden)?.map(sigmoid);
        if let Some(c) = self.cache.as_mut() {
            c.probs = probs.clone();
        }
        Ok(probs)
    }

    /// Backward from `∂L/∂p`; returns input gradients per video.
    pub fn backward(&mut self, grad_probs: &Matrix<T>) -> Result<Vec<VideoInputs<T>>> {
        let cache = self
            .cache
            .take()
            .expect("VideoLevelModel::backward called before forward");
        let d_logits = sigmoid_backward(&cache.probs, grad_probs)?;
        let d_hidden = self.output.backward(&d_logits)?;
        let d_pre = relu_backward(&cache.pre_activation, &d_hidden)?;
        let d_fused = self.norm.backward(&d_pre)?;
        let mut d_parts = self.fusion.backward(&d_fused)?.into_iter();
        let (d_img, d_aud, d_title) = match (d_parts.next(), d_parts.next(), d_parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => unreachable!("fusion has three modalities"),
        };
        let d_images = self.image_pool.backward(&d_img)?;
        let d_audios = self.audio_pool.backward(&d_aud)?;
        self.cache = Some(cache);
        Ok(d_images
            .into_iter()
            .zip(d_audios)
            .enumerate()
            .map(|(i, (image, audio))| VideoInputs {
                image,
                audio,
                title: d_title.row(i).to_vec(),
            })
            .collect())
    }
}

impl<T: Real> Module<T> for VideoLevelModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.image_pool.visit(&join(prefix, "image_pool"), f);
        self.audio_pool.visit(&join(prefix, "audio_pool"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
}

pub struct VideoLevelOutcome {
    pub model: VideoLevelModel<f32>,
    pub optimizer: Adam<f32>,
    pub report: TrainReport,
}

struct Example {
    inputs: VideoInputs<f32>,
    target: Vec<f32>,
}

fn examples(videos: &[&VideoRecord], frames: usize) -> Result<Vec<Example>> {
    videos
        .iter()
        .map(|v| {
            Ok(Example {
                inputs: VideoInputs::from_record(v, frames)?,
                target: video_target(v.labels().values()),
            })
        })
        .collect()
}

/// Mean over videos of the correlation between predicted and target class vectors.
fn video_level_score(model: &mut VideoLevelModel<f32>, data: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let p = model.forward(core::slice::from_ref(&ex.inputs), Mode::Eval, &mut NoRng)?;
        total += pearson(p.row(0), &ex.target)?.r;
    }
    Ok(total / data.len().max(1) as f64)
}

pub fn build_video_model(reference: &VideoRecord, config: &VideoLevelConfig) -> Result<VideoLevelModel<f32>> {
    let mut rng = stream_rng(config.seed, streams::INIT);
    VideoLevelModel::new(
        config.clone(),
        reference.track(&Modality::Image)?.dim(),
        reference.track(&Modality::Audio)?.dim(),
        reference.track(&Modality::Title)?.dim(),
        &mut rng,
    )
}

pub fn train_video_level(dataset: &Dataset, config: &VideoLevelConfig) -> Result<VideoLevelOutcome> {
    config.validate()?;
    let train_videos = dataset.require_split(Split::Train)?;
    let val_videos = dataset.require_split(Split::Validation)?;
    let train_data = examples(&train_videos, config.frames)?;
    let val_data = examples(&val_videos, config.frames)?;
    let batch_size = config.batch_size.min(train_data.len());
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }

    let mut model = build_video_model(train_videos[0], config)?;
    let mut optimizer = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = stream_rng(config.seed, streams::SHUFFLE);
    let mut dropout_rng = stream_rng(config.seed, streams::DROPOUT);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        validation_correlation: Vec::new(),
        best_epoch: 0,
        best_validation_correlation: f64::NEG_INFINITY,
        steps: 0,
    };
    let mut best = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let inputs: Vec<VideoInputs<f32>> = chunk.iter().map(|&i| train_data[i].inputs.clone()).collect();
            let targets: Vec<&[f32]> = chunk.iter().map(|&i| train_data[i].target.as_slice()).collect();
            let targets = Matrix::from_rows(&targets)?;
            model.zero_grad();
            let probs = model.forward(&inputs, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = bce_loss(&probs, &targets)?;
            report.steps += 1;
            if !loss.is_finite() {
                return Err(Error::NumericalAbort { epoch, step: report.steps as usize, loss });
            }
            model.backward(&grad)?;
            optimizer.step(&mut model)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        report.train_loss.push(loss_sum / seen.max(1) as f64);
        let corr = video_level_score(&mut model, &val_data)?;
        report.validation_correlation.push(corr);
        if corr > report.best_validation_correlation {
            report.best_validation_correlation = corr;
            report.best_epoch = epoch;
            best = Some((model.clone(), optimizer.clone()));
        }
    }
    let (model, optimizer) = best.ok_or(Error::NumericalAbort {
        epoch: config.epochs,
        step: report.steps as usize,
        loss: f64::NAN,
    })?;
    Ok(VideoLevelOutcome { model, optimizer, report })
}

/// Exports one single-row `video_theme` track per video.
pub fn export_video_features(
    model: &mut VideoLevelModel<f32>,
    videos: &[VideoRecord],
) -> Result<Vec<(String, FeatureTrack)>> {
    let frames = model.config().frames;
    videos
        .iter()
        .map(|v| {
            let inputs = VideoInputs::from_record(v, frames)?;
            let embedding = model.embed(core::slice::from_ref(&inputs))?;
            let rate = Rate::new(Rate::FRAME.num, v.frames() as u32 * Rate::FRAME.den)?;
            let track = FeatureTrack::new(Modality::VideoTheme, rate, embedding)?;
            Ok((String::from(v.video_id()), track))
        })
        .collect()
}

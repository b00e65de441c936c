//! The frame-level model: modal fusion followed by the mixture-of-experts head.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{align_sample, Modality, VideoRecord};
use crate::fusion::{FusionConfig, FusionKind, ModalFusion};
use crate::moe::{MoeConfig, MoeHead};
use crate::nn::{join, Mode, Module, Slot};
use crate::tensor::{Matrix, Real};

/// Rows per forward pass when predicting whole videos.
const PREDICT_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameModelConfig {
    pub modalities: Vec<Modality>,
    pub dims: Vec<usize>,
    pub fused_dim: usize,
    pub modal_dropout: f64,
    pub fusion: FusionKind,
    pub experts: usize,
    pub hidden: usize,
}

impl FrameModelConfig {
    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            dims: self.dims.clone(),
            fused_dim: self.fused_dim,
            modal_dropout: self.modal_dropout,
            kind: self.fusion,
        }
    }

    pub fn moe_config(&self) -> MoeConfig {
        MoeConfig::new(self.fused_dim, self.experts, self.hidden)
    }
}

#[derive(Clone, Debug)]
pub struct FrameModel<T> {
    config: FrameModelConfig,
    pub fusion: ModalFusion<T>,
    pub head: MoeHead<T>,
}

impl<T: Real> FrameModel<T> {
    pub fn new<R: Rng + ?Sized>(config: FrameModelConfig, rng: &mut R) -> Result<Self> {
        if config.modalities.len() != config.dims.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} modalities but {} dims",
                config.modalities.len(),
                config.dims.len()
            )));
        }
        let fusion = ModalFusion::new(config.fusion_config(), rng)?;
        let head = MoeHead::new(config.moe_config(), rng)?;
        Ok(Self { config, fusion, head })
    }

    pub fn config(&self) -> &FrameModelConfig {
        &self.config
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, inputs: &[Matrix<T>], mode: Mode, rng: &mut R) -> Result<Matrix<T>> {
        let fused = self.fusion.forward(inputs, mode, rng)?;
        self.head.forward(&fused.fused, mode)
    }

    /// Backward from `∂L/∂p`; returns gradients w.r.t. each modality input.
    pub fn backward(&mut self, grad_probs: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let dv = self.head.backward(grad_probs)?;
        self.fusion.backward(&dv)
    }

    /// Eval-mode probabilities for every frame of a video, `T×classes`.
    pub fn predict_video(&mut self, record: &VideoRecord) -> Result<Matrix<f32>> {
        let frames: Vec<(&VideoRecord, usize)> = (0..record.frames()).map(|t| (record, t)).collect();
        let mut parts = Vec::new();
        let mut rng = NoRng;
        for chunk in frames.chunks(PREDICT_CHUNK) {
            let (inputs, _) = gather_frames::<T>(chunk, &self.config.modalities)?;
            let p = self.forward(&inputs, Mode::Eval, &mut rng)?;
            parts.push(p.cast::<f32>());
        }
        Matrix::vstack(&parts)
    }
}

impl<T: Real> Module<T> for FrameModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.head.visit(&join(prefix, "moe"), f);
    }
}

/// Assembles per-modality input batches and the label batch for the given
/// `(video, frame index)` pairs, in order.
pub fn gather_frames<T: Real>(
    frames: &[(&VideoRecord, usize)],
    modalities: &[Modality],
) -> Result<(Vec<Matrix<T>>, Matrix<T>)> {
    let batch = frames.len();
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidConfig(alloc::string::String::from("empty batch")))?;
    let mut inputs: Vec<Matrix<T>> = modalities
        .iter()
        .map(|m| first.0.track(m).map(|t| Matrix::zeros(batch, t.dim())))
        .collect::<Result<_>>()?;
    let mut labels = Matrix::zeros(batch, first.0.labels().dim());
    for (row, &(record, t)) in frames.iter().enumerate() {
        let sample = align_sample(record, t, modalities)?;
        for (dst, src) in inputs.iter_mut().zip(&sample.features) {
            if dst.cols() != src.len() {
                return Err(Error::ShapeMismatch {
                    what: "modality dim across videos",
                    expected: (1, dst.cols()),
                    found: (1, src.len()),
                });
            }
            for (d, &s) in dst.row_mut(row).iter_mut().zip(src.iter()) {
                *d = T::lit(s as f64);
            }
        }
        for (d, &s) in labels.row_mut(row).iter_mut().zip(sample.labels) {
            *d = T::lit(s as f64);
        }
    }
    Ok((inputs, labels))
}

/// Random source for eval-mode passes, which never draw.
pub(crate) struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode does not sample")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval mode does not sample")
    }
}

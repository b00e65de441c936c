//! Modal attention fusion.
//!
//! Each modality `i` has a learnable vector `w_i`; its score on a sample is
//! `s_i = w_i · v_i` and the weights are `α = softmax(s)` across modalities.
//! The fused feature is the projection of `α_1 v_1 ⊕ … ⊕ α_N v_N`. Modal
//! dropout zeroes whole modalities before scoring, so a dropped modality
//! scores 0 and contributes an all-zero segment.
//!
//! [`FusionKind::Concat`] skips the attention weights and projects the plain
//! concatenation; it is the baseline the attention variant is compared with.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, softmax, Dense, Mode, Module, Param, Slot};
use crate::tensor::{axpy, dot, Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Attention,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub dims: Vec<usize>,
    pub fused_dim: usize,
    pub modal_dropout: f64,
    pub kind: FusionKind,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidConfig(String::from("fusion needs at least one modality of nonzero dim")));
        }
        if self.fused_dim == 0 {
            return Err(Error::InvalidConfig(String::from("fused_dim must be positive")));
        }
        if !(0.0..1.0).contains(&self.modal_dropout) {
            return Err(Error::InvalidConfig(String::from("modal_dropout must be in [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedBatch<T> {
    /// `B×fused_dim`
    pub fused: Matrix<T>,
    /// `B×N` attention weights; `None` for concatenation fusion.
    pub alpha: Option<Matrix<T>>,
    /// Row-major `B×N`, `true` where the modality was zeroed.
    pub dropped: Vec<bool>,
}

impl<T> FusedBatch<T> {
    pub fn is_dropped(&self, sample: usize, modality: usize, n_modalities: usize) -> bool {
        self.dropped[sample * n_modalities + modality]
    }
}

#[derive(Clone, Debug)]
struct Cache<T> {
    inputs: Vec<Matrix<T>>,
    alpha: Option<Matrix<T>>,
    dropped: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ModalFusion<T> {
    config: FusionConfig,
    pub attention: Vec<Param<T>>,
    pub projection: Dense<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> ModalFusion<T> {
    pub fn new<R: Rng + ?Sized>(config: FusionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let attention = config
            .dims
            .iter()
            .map(|&d| Param::glorot(1, d, d, 1, rng))
            .collect();
        let total = config.dims.iter().sum();
        let projection = Dense::new(total, config.fused_dim, rng);
        Ok(Self {
            config,
            attention,
            projection,
            cache: None,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn n_modalities(&self) -> usize {
        self.config.dims.len()
    }

    /// `inputs[i]` is the `B×dim_i` batch of modality `i`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        inputs: &[Matrix<T>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<FusedBatch<T>> {
        let n = self.n_modalities();
        if inputs.len() != n {
            return Err(Error::ShapeMismatch {
                what: "fusion modality count",
                expected: (n, 1),
                found: (inputs.len(), 1),
            });
        }
        let batch = inputs[0].rows();
        for (x, &d) in inputs.iter().zip(&self.config.dims) {
            x.ensure_shape("fusion modality input", (batch, d))?;
        }

        let mut dropped = vec![false; batch * n];
        let mut masked: Vec<Matrix<T>> = inputs.to_vec();
        if mode == Mode::Train && self.config.modal_dropout > 0.0 {
            for b in 0..batch {
                for (i, x) in masked.iter_mut().enumerate() {
                    if rng.random::<f64>() < self.config.modal_dropout {
                        dropped[b * n + i] = true;
                        x.row_mut(b).fill(T::zero());
                    }
                }
            }
        }

        let alpha = match self.config.kind {
            FusionKind::Concat => None,
            FusionKind::Attention => {
                let mut alpha = Matrix::zeros(batch, n);
                for b in 0..batch {
                    let row = alpha.row_mut(b);
                    for (i, (x, w)) in masked.iter().zip(&self.attention).enumerate() {
                        row[i] = dot(w.value.row(0), x.row(b));
                    }
                    softmax(row);
                }
                Some(alpha)
            }
        };

        let total: usize = self.config.dims.iter().sum();
        let mut concat = Matrix::zeros(batch, total);
        for b in 0..batch {
            let dst = concat.row_mut(b);
            let mut offset = 0;
            for (i, x) in masked.iter().enumerate() {
                let d = x.cols();
                let a = alpha.as_ref().map_or(T::one(), |al| al.get(b, i));
                for (o, &v) in dst[offset..offset + d].iter_mut().zip(x.row(b)) {
                    *o = a * v;
                }
                offset += d;
            }
        }
        let fused = self.projection.forward(&concat)?;
        self.cache = Some(Cache {
            inputs: masked,
            alpha: alpha.clone(),
            dropped: dropped.clone(),
        });
        Ok(FusedBatch { fused, alpha, dropped })
    }

    /// Returns gradients w.r.t. each modality input of the last forward pass.
    pub fn backward(&mut self, grad_fused: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let d_concat = self.projection.backward(grad_fused)?;
        let cache = self
            .cache
            .as_ref()
            .expect("ModalFusion::backward called before forward");
        let n = self.config.dims.len();
        let batch = d_concat.rows();
        let mut grads: Vec<Matrix<T>> = self
            .config
            .dims
            .iter()
            .map(|&d| Matrix::zeros(batch, d))
            .collect();

        for b in 0..batch {
            let dz = d_concat.row(b);
            match &cache.alpha {
                None => {
                    let mut offset = 0;
                    for g in grads.iter_mut() {
                        let d = g.cols();
                        g.row_mut(b).copy_from_slice(&dz[offset..offset + d]);
                        offset += d;
                    }
                }
                Some(alpha) => {
                    let a = alpha.row(b);
                    let mut d_alpha = vec![T::zero(); n];
                    let mut offset = 0;
                    for i in 0..n {
                        let d = self.config.dims[i];
                        let seg = &dz[offset..offset + d];
                        d_alpha[i] = dot(seg, cache.inputs[i].row(b));
                        axpy(a[i], seg, grads[i].row_mut(b));
                        offset += d;
                    }
                    let inner = dot(a, &d_alpha);
                    for i in 0..n {
                        let d_score = a[i] * (d_alpha[i] - inner);
                        let x = cache.inputs[i].row(b);
                        axpy(d_score, x, self.attention[i].grad.data_mut());
                        axpy(d_score, self.attention[i].value.row(0), grads[i].row_mut(b));
                    }
                }
            }
            for (i, g) in grads.iter_mut().enumerate() {
                if cache.dropped[b * n + i] {
                    g.row_mut(b).fill(T::zero());
                }
            }
        }
        Ok(grads)
    }
}

impl<T: Real> Module<T> for ModalFusion<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        for (i, w) in self.attention.iter_mut().enumerate() {
            f(&join(prefix, &alloc::format!("attention.{i}")), Slot::Param(w));
        }
        self.projection.visit(&join(prefix, "projection"), f);
    }
}

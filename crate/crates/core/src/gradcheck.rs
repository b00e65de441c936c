//! Central finite-difference gradient checking.
//!
//! A [`Differentiable`] fragment exposes a scalar objective, an analytic
//! gradient pass and its parameters. [`grad_check`] compares every analytic
//! partial derivative with `(f(θ+h) − f(θ−h)) / 2h`.
//!
//! [`gradient_suite`] builds toy-sized fragments for every differentiable
//! component and checks them in 64-bit.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{FusionConfig, FusionKind, ModalFusion};
use crate::model::{FrameModel, FrameModelConfig, NoRng};
use crate::moe::{MoeConfig, MoeHead};
use crate::netvlad::{NetVlad, NetVladConfig};
use crate::nn::{bce_loss, sigmoid, sigmoid_backward, softmax_backward, softmax_rows, BatchNorm, Dense, Mode, Module, Param};
use crate::tensor::{Matrix, Real};
use crate::video_level::{VideoInputs, VideoLevelConfig, VideoLevelModel};
use crate::features::Modality;

pub trait Differentiable<T: Real> {
    /// Forward pass only.
    fn objective(&mut self) -> Result<f64>;
    /// Forward and backward; accumulates gradients into the parameters.
    fn gradient(&mut self) -> Result<f64>;
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl GradCheckConfig {
    /// 64-bit settings: h = 1e-5, relative error below 1e-4. The floor keeps
    /// difference round-off (~1e-11) on structurally zero gradients, such as a
    /// bias feeding batch norm, from registering as relative error.
    pub const F64: Self = Self {
        step: 1e-5,
        tolerance: 1e-4,
        floor: 1e-6,
    };
    /// 32-bit settings: relative error below 1e-2.
    pub const F32: Self = Self {
        step: 1e-2,
        tolerance: 1e-2,
        floor: 1e-4,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check<T: Real, D: Differentiable<T> + ?Sized>(
    fragment: &mut D,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    fragment.visit_params(&mut |_, p| p.grad.fill(T::zero()));
    fragment.gradient()?;
    let mut analytic: Vec<(String, Vec<T>)> = Vec::new();
    fragment.visit_params(&mut |name, p| analytic.push((String::from(name), p.grad.data().to_vec())));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: config.tolerance,
        passed: true,
    };
    let h = T::lit(config.step);
    for (slot, (name, grads)) in analytic.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let plus = perturb(fragment, slot, i, h)?;
            let minus = perturb(fragment, slot, i, -h)?;
            let numeric = (plus - minus) / (2.0 * config.step);
            let err = relative_error(g.as_f64(), numeric, config.floor);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report.passed = report.max_rel_error < config.tolerance;
    Ok(report)
}

fn perturb<T: Real, D: Differentiable<T> + ?Sized>(fragment: &mut D, slot: usize, index: usize, delta: T) -> Result<f64> {
    let mut seen = 0;
    let mut original = T::zero();
    fragment.visit_params(&mut |_, p| {
        if seen == slot {
            let v = &mut p.value.data_mut()[index];
            original = *v;
            *v = original + delta;
        }
        seen += 1;
    });
    let value = fragment.objective();
    seen = 0;
    fragment.visit_params(&mut |_, p| {
        if seen == slot {
            p.value.data_mut()[index] = original;
        }
        seen += 1;
    });
    value
}

fn random_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-1.0..1.0)))
}

fn random_targets<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.random_range(0.0..1.0)))
}

/// `Σ w ⊙ y` and its gradient `w`.
fn weighted_sum<T: Real>(y: &Matrix<T>, w: &Matrix<T>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum()
}

/// Dense layer followed by sigmoid and mean BCE against fixed targets.
pub struct DenseBce<T> {
    pub layer: Dense<T>,
    pub input: Param<T>,
    pub targets: Matrix<T>,
}

impl<T: Real> DenseBce<T> {
    pub fn new(seed: u64, batch: usize, dim_in: usize, dim_out: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layer: Dense::new(dim_in, dim_out, &mut rng),
            input: Param::new(random_matrix(&mut rng, batch, dim_in)),
            targets: random_targets(&mut rng, batch, dim_out),
        }
    }
}

impl<T: Real> Differentiable<T> for DenseBce<T> {
    fn objective(&mut self) -> Result<f64> {
        let p = self.layer.apply(&self.input.value)?.map(sigmoid);
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradient(&mut self) -> Result<f64> {
        let p = self.layer.forward(&self.input.value)?.map(sigmoid);
        let (loss, dp) = bce_loss(&p, &self.targets)?;
        let dz = sigmoid_backward(&p, &dp)?;
        let dx = self.layer.backward(&dz)?;
        self.input.grad.add_assign(&dx)?;
        Ok(loss)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.layer.visit_params("dense", f);
        f("input", &mut self.input);
    }
}

/// Dense layer under a fixed linear read-out.
pub struct DenseProbe<T> {
    pub layer: Dense<T>,
    pub input: Param<T>,
    pub readout: Matrix<T>,
}

impl<T: Real> DenseProbe<T> {
    pub fn new(seed: u64, batch: usize, dim_in: usize, dim_out: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layer: Dense::new(dim_in, dim_out, &mut rng),
            input: Param::new(random_matrix(&mut rng, batch, dim_in)),
            readout: random_matrix(&mut rng, batch, dim_out),
        }
    }

    /// `dim×dim` identity weights and zero bias.
    pub fn identity(seed: u64, batch: usize, dim: usize) -> Self {
        let mut probe = Self::new(seed, batch, dim, dim);
        let eye = Matrix::from_fn(dim, dim, |r, c| if r == c { T::one() } else { T::zero() });
        probe.layer = Dense::from_parts(eye, Matrix::zeros(1, dim)).expect("square identity");
        probe
    }
}

impl<T: Real> Differentiable<T> for DenseProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        Ok(weighted_sum(&self.layer.apply(&self.input.value)?, &self.readout))
    }

    fn gradient(&mut self) -> Result<f64> {
        let y = self.layer.forward(&self.input.value)?;
        let dx = self.layer.backward(&self.readout)?;
        self.input.grad.add_assign(&dx)?;
        Ok(weighted_sum(&y, &self.readout))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.layer.visit_params("dense", f);
        f("input", &mut self.input);
    }
}

/// Wraps a fragment and scales its analytic gradient, to confirm the checker fails.
pub struct ScaledBackward<D> {
    pub inner: D,
    pub factor: f64,
}

impl<T: Real, D: Differentiable<T>> Differentiable<T> for ScaledBackward<D> {
    fn objective(&mut self) -> Result<f64> {
        self.inner.objective()
    }

    fn gradient(&mut self) -> Result<f64> {
        let loss = self.inner.gradient()?;
        let k = T::lit(self.factor);
        self.inner.visit_params(&mut |_, p| p.grad.scale(k));
        Ok(loss)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.inner.visit_params(f)
    }
}

pub struct SoftmaxProbe<T> {
    pub input: Param<T>,
    pub readout: Matrix<T>,
}

impl<T: Real> Differentiable<T> for SoftmaxProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        Ok(weighted_sum(&softmax_rows(&self.input.value), &self.readout))
    }

    fn gradient(&mut self) -> Result<f64> {
        let y = softmax_rows(&self.input.value);
        let dx = softmax_backward(&y, &self.readout)?;
        self.input.grad.add_assign(&dx)?;
        Ok(weighted_sum(&y, &self.readout))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("input", &mut self.input);
    }
}

pub struct BatchNormProbe<T> {
    pub norm: BatchNorm<T>,
    pub mode: Mode,
    pub input: Param<T>,
    pub readout: Matrix<T>,
}

impl<T: Real> BatchNormProbe<T> {
    pub fn new(seed: u64, batch: usize, dim: usize, mode: Mode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut norm = BatchNorm::new(dim);
        norm.gamma.value = random_matrix(&mut rng, 1, dim);
        norm.beta.value = random_matrix(&mut rng, 1, dim);
        norm.running_mean = random_matrix(&mut rng, 1, dim);
        norm.running_var = random_targets::<T>(&mut rng, 1, dim).map(|v| v + T::lit(0.5));
        Self {
            norm,
            mode,
            input: Param::new(random_matrix(&mut rng, batch, dim)),
            readout: random_matrix(&mut rng, batch, dim),
        }
    }
}

impl<T: Real> Differentiable<T> for BatchNormProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        // running statistics do not feed train-mode outputs, so a copy keeps them fixed
        let mut norm = self.norm.clone();
        Ok(weighted_sum(&norm.forward(&self.input.value, self.mode)?, &self.readout))
    }

    fn gradient(&mut self) -> Result<f64> {
        let snapshot = (self.norm.running_mean.clone(), self.norm.running_var.clone());
        let y = self.norm.forward(&self.input.value, self.mode)?;
        let dx = self.norm.backward(&self.readout)?;
        self.norm.running_mean = snapshot.0;
        self.norm.running_var = snapshot.1;
        self.input.grad.add_assign(&dx)?;
        Ok(weighted_sum(&y, &self.readout))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.norm.visit_params("bn", f);
        f("input", &mut self.input);
    }
}

/// Modal fusion without dropout under a linear read-out.
pub struct FusionProbe<T> {
    pub fusion: ModalFusion<T>,
    pub inputs: Vec<Param<T>>,
    pub readout: Matrix<T>,
}

impl<T: Real> FusionProbe<T> {
    pub fn new(seed: u64, batch: usize, dims: &[usize], fused_dim: usize, kind: FusionKind) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fusion = ModalFusion::new(
            FusionConfig {
                dims: dims.to_vec(),
                fused_dim,
                modal_dropout: 0.0,
                kind,
            },
            &mut rng,
        )?;
        // larger attention vectors give non-uniform weights
        for w in fusion.attention.iter_mut() {
            w.value = random_matrix(&mut rng, 1, w.value.cols());
        }
        let inputs = dims.iter().map(|&d| Param::new(random_matrix(&mut rng, batch, d))).collect();
        Ok(Self {
            fusion,
            inputs,
            readout: random_matrix(&mut rng, batch, fused_dim),
        })
    }

    fn values(&self) -> Vec<Matrix<T>> {
        self.inputs.iter().map(|p| p.value.clone()).collect()
    }
}

impl<T: Real> Differentiable<T> for FusionProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        let out = self.fusion.forward(&self.values(), Mode::Eval, &mut NoRng)?;
        Ok(weighted_sum(&out.fused, &self.readout))
    }

    fn gradient(&mut self) -> Result<f64> {
        let out = self.fusion.forward(&self.values(), Mode::Eval, &mut NoRng)?;
        let grads = self.fusion.backward(&self.readout)?;
        for (p, g) in self.inputs.iter_mut().zip(&grads) {
            p.grad.add_assign(g)?;
        }
        Ok(weighted_sum(&out.fused, &self.readout))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.fusion.visit_params("fusion", f);
        for (i, p) in self.inputs.iter_mut().enumerate() {
            f(&alloc::format!("input.{i}"), p);
        }
    }
}

pub struct NetVladProbe<T> {
    pub pool: NetVlad<T>,
    pub videos: Vec<Param<T>>,
    pub readout: Matrix<T>,
}

impl<T: Real> NetVladProbe<T> {
    pub fn new(seed: u64, frames: &[usize], config: NetVladConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = NetVlad::new(config, &mut rng)?;
        pool.assignment.weight.value = random_matrix(&mut rng, config.clusters, config.dim);
        let videos = frames
            .iter()
            .map(|&n| Param::new(random_matrix(&mut rng, n, config.dim)))
            .collect();
        Ok(Self {
            pool,
            videos,
            readout: random_matrix(&mut rng, frames.len(), config.pooled_dim),
        })
    }

    fn values(&self) -> Vec<Matrix<T>> {
        self.videos.iter().map(|p| p.value.clone()).collect()
    }
}

impl<T: Real> Differentiable<T> for NetVladProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        Ok(weighted_sum(&self.pool.forward(&self.values())?, &self.readout))
    }

    fn gradient(&mut self) -> Result<f64> {
        let y = self.pool.forward(&self.values())?;
        let grads = self.pool.backward(&self.readout)?;
        for (p, g) in self.videos.iter_mut().zip(&grads) {
            p.grad.add_assign(g)?;
        }
        Ok(weighted_sum(&y, &self.readout))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.pool.visit_params("netvlad", f);
        for (i, p) in self.videos.iter_mut().enumerate() {
            f(&alloc::format!("video.{i}"), p);
        }
    }
}

/// MOE head under BCE against fixed targets.
pub struct MoeProbe<T> {
    pub head: MoeHead<T>,
    pub mode: Mode,
    pub input: Param<T>,
    pub targets: Matrix<T>,
}

impl<T: Real> MoeProbe<T> {
    pub fn new(seed: u64, batch: usize, config: MoeConfig, mode: Mode) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = MoeHead::new(config, &mut rng)?;
        for e in head.experts.iter_mut() {
            e.norm.running_mean = random_matrix(&mut rng, 1, config.hidden);
            e.norm.running_var = random_targets::<T>(&mut rng, 1, config.hidden).map(|v| v + T::lit(0.5));
        }
        Ok(Self {
            head,
            mode,
            input: Param::new(random_matrix(&mut rng, batch, config.input_dim)),
            targets: random_targets(&mut rng, batch, config.classes),
        })
    }
}

impl<T: Real> Differentiable<T> for MoeProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        let mut head = self.head.clone();
        let p = head.forward(&self.input.value, self.mode)?;
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradient(&mut self) -> Result<f64> {
        let mut head = self.head.clone();
        let p = head.forward(&self.input.value, self.mode)?;
        let (loss, dp) = bce_loss(&p, &self.targets)?;
        let dv = head.backward(&dp)?;
        // move accumulated gradients back, leaving running statistics untouched
        let mut grads = Vec::new();
        head.visit_params("", &mut |_, p| grads.push(p.grad.clone()));
        let mut i = 0;
        self.head.visit_params("", &mut |_, p| {
            p.grad.add_assign(&grads[i]).expect("same layout");
            i += 1;
        });
        self.input.grad.add_assign(&dv)?;
        Ok(loss)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.head.visit_params("moe", f);
        f("input", &mut self.input);
    }
}

/// Full frame-level model (fusion without dropout, MOE) under BCE.
pub struct FrameModelProbe<T> {
    pub model: FrameModel<T>,
    pub mode: Mode,
    pub inputs: Vec<Param<T>>,
    pub targets: Matrix<T>,
}

impl<T: Real> FrameModelProbe<T> {
    pub fn new(seed: u64, batch: usize, dims: &[usize], mode: Mode) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = FrameModelConfig {
            modalities: Modality::LADDER[..dims.len()].to_vec(),
            dims: dims.to_vec(),
            fused_dim: 6,
            modal_dropout: 0.0,
            fusion: FusionKind::Attention,
            experts: 2,
            hidden: 5,
        };
        let mut model = FrameModel::new(config, &mut rng)?;
        for w in model.fusion.attention.iter_mut() {
            w.value = random_matrix(&mut rng, 1, w.value.cols());
        }
        let inputs = dims.iter().map(|&d| Param::new(random_matrix(&mut rng, batch, d))).collect();
        Ok(Self {
            model,
            mode,
            inputs,
            targets: random_targets(&mut rng, batch, crate::NUM_CLASSES),
        })
    }

    fn values(&self) -> Vec<Matrix<T>> {
        self.inputs.iter().map(|p| p.value.clone()).collect()
    }
}

impl<T: Real> Differentiable<T> for FrameModelProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        let mut model = self.model.clone();
        let p = model.forward(&self.values(), self.mode, &mut NoRng)?;
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradient(&mut self) -> Result<f64> {
        let mut model = self.model.clone();
        let p = model.forward(&self.values(), self.mode, &mut NoRng)?;
        let (loss, dp) = bce_loss(&p, &self.targets)?;
        let grads = model.backward(&dp)?;
        let mut pg = Vec::new();
        model.visit_params("", &mut |_, p| pg.push(p.grad.clone()));
        let mut i = 0;
        self.model.visit_params("", &mut |_, p| {
            p.grad.add_assign(&pg[i]).expect("same layout");
            i += 1;
        });
        for (p, g) in self.inputs.iter_mut().zip(&grads) {
            p.grad.add_assign(g)?;
        }
        Ok(loss)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.model.visit_params("model", f);
        for (i, p) in self.inputs.iter_mut().enumerate() {
            f(&alloc::format!("input.{i}"), p);
        }
    }
}

/// Video-level network under BCE against fixed averaged-label targets.
pub struct VideoLevelProbe<T> {
    pub model: VideoLevelModel<T>,
    pub mode: Mode,
    pub images: Vec<Param<T>>,
    pub audios: Vec<Param<T>>,
    pub titles: Param<T>,
    pub targets: Matrix<T>,
}

impl<T: Real> VideoLevelProbe<T> {
    pub fn new(seed: u64, videos: usize, mode: Mode) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = VideoLevelConfig {
            frames: 4,
            clusters: 2,
            pooled_dim: 4,
            embed_dim: 5,
            ..VideoLevelConfig::default()
        };
        let (di, da, dt) = (3, 2, 3);
        let mut model = VideoLevelModel::new(config, di, da, dt, &mut rng)?;
        model.norm.running_mean = random_matrix(&mut rng, 1, 5);
        let images = (0..videos).map(|_| Param::new(random_matrix(&mut rng, 4, di))).collect();
        let audios = (0..videos).map(|_| Param::new(random_matrix(&mut rng, 4, da))).collect();
        Ok(Self {
            model,
            mode,
            images,
            audios,
            titles: Param::new(random_matrix(&mut rng, videos, dt)),
            targets: random_targets(&mut rng, videos, crate::NUM_CLASSES),
        })
    }

    fn batch(&self) -> Vec<VideoInputs<T>> {
        self.images
            .iter()
            .zip(&self.audios)
            .enumerate()
            .map(|(i, (im, au))| VideoInputs {
                image: im.value.clone(),
                audio: au.value.clone(),
                title: self.titles.value.row(i).to_vec(),
            })
            .collect()
    }
}

impl<T: Real> Differentiable<T> for VideoLevelProbe<T> {
    fn objective(&mut self) -> Result<f64> {
        let mut model = self.model.clone();
        let p = model.forward(&self.batch(), self.mode, &mut NoRng)?;
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradient(&mut self) -> Result<f64> {
        let mut model = self.model.clone();
        let p = model.forward(&self.batch(), self.mode, &mut NoRng)?;
        let (loss, dp) = bce_loss(&p, &self.targets)?;
        let grads = model.backward(&dp)?;
        let mut pg = Vec::new();
        model.visit_params("", &mut |_, p| pg.push(p.grad.clone()));
        let mut i = 0;
        self.model.visit_params("", &mut |_, p| {
            p.grad.add_assign(&pg[i]).expect("same layout");
            i += 1;
        });
        for (b, g) in grads.iter().enumerate() {
            self.images[b].grad.add_assign(&g.image)?;
            self.audios[b].grad.add_assign(&g.audio)?;
            for (d, &s) in self.titles.grad.row_mut(b).iter_mut().zip(&g.title) {
                *d += s;
            }
        }
        Ok(loss)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.model.visit_params("video", f);
        for (i, p) in self.images.iter_mut().enumerate() {
            f(&alloc::format!("image.{i}"), p);
        }
        for (i, p) in self.audios.iter_mut().enumerate() {
            f(&alloc::format!("audio.{i}"), p);
        }
        f("titles", &mut self.titles);
    }
}

/// Checks every differentiable component on toy shapes in 64-bit.
pub fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let cfg = GradCheckConfig::F64;
    let mut out = Vec::new();
    out.push(("dense", grad_check(&mut DenseProbe::<f64>::new(seed, 3, 4, 5), cfg)?));
    out.push(("dense_sigmoid_bce", grad_check(&mut DenseBce::<f64>::new(seed, 4, 5, 3), cfg)?));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut softmax = SoftmaxProbe::<f64> {
        input: Param::new(random_matrix(&mut rng, 3, 4)),
        readout: random_matrix(&mut rng, 3, 4),
    };
    out.push(("softmax", grad_check(&mut softmax, cfg)?));
    out.push(("batchnorm_train", grad_check(&mut BatchNormProbe::<f64>::new(seed, 5, 3, Mode::Train), cfg)?));
    out.push(("batchnorm_eval", grad_check(&mut BatchNormProbe::<f64>::new(seed, 5, 3, Mode::Eval), cfg)?));
    out.push((
        "fusion",
        grad_check(&mut FusionProbe::<f64>::new(seed, 3, &[4, 4], 3, FusionKind::Attention)?, cfg)?,
    ));
    out.push((
        "fusion_concat",
        grad_check(&mut FusionProbe::<f64>::new(seed, 3, &[4, 2], 3, FusionKind::Concat)?, cfg)?,
    ));
    let nv = NetVladConfig { dim: 3, clusters: 2, pooled_dim: 4 };
    out.push(("netvlad", grad_check(&mut NetVladProbe::<f64>::new(seed, &[4], nv)?, cfg)?));
    out.push(("netvlad_batch", grad_check(&mut NetVladProbe::<f64>::new(seed, &[4, 2], nv)?, cfg)?));
    out.push(("moe", grad_check(&mut MoeProbe::<f64>::new(seed, 4, MoeConfig::new(6, 2, 4), Mode::Eval)?, cfg)?));
    out.push((
        "moe_train",
        grad_check(&mut MoeProbe::<f64>::new(seed, 4, MoeConfig::new(6, 2, 4), Mode::Train)?, cfg)?,
    ));
    out.push(("frame_model", grad_check(&mut FrameModelProbe::<f64>::new(seed, 4, &[3, 2, 4], Mode::Eval)?, cfg)?));
    out.push((
        "frame_model_train",
        grad_check(&mut FrameModelProbe::<f64>::new(seed, 4, &[3, 2, 4], Mode::Train)?, cfg)?,
    ));
    out.push(("video_level", grad_check(&mut VideoLevelProbe::<f64>::new(seed, 3, Mode::Eval)?, cfg)?));
    out.push((
        "video_level_train",
        grad_check(&mut VideoLevelProbe::<f64>::new(seed, 3, Mode::Train)?, cfg)?,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_sigmoid_bce_passes() {
        let r = grad_check(&mut DenseBce::<f64>::new(1, 4, 5, 3), GradCheckConfig::F64).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 5 * 3 + 3 + 4 * 5);
    }

    #[test]
    fn identity_layer_is_near_exact() {
        let r = grad_check(&mut DenseProbe::<f64>::identity(2, 3, 4), GradCheckConfig::F64).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn doubled_backward_fails() {
        let mut bad = ScaledBackward {
            inner: DenseBce::<f64>::new(3, 4, 5, 3),
            factor: 2.0,
        };
        let r = grad_check(&mut bad, GradCheckConfig::F64).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn thirty_two_bit_mode() {
        let r = grad_check(&mut DenseBce::<f32>::new(4, 4, 5, 3), GradCheckConfig::F32).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn suite_passes() {
        for (name, r) in gradient_suite(7).unwrap() {
            assert!(r.passed, "{name}: {r:?}");
        }
    }
}

//! NetVLAD temporal pooling.
//!
//! Frames are softly assigned to `K` clusters, `a_k(x) = softmax(W x + b)_k`,
//! and the residuals to the cluster centers are aggregated,
//! `V(k) = Σ_t a_k(x_t)(x_t − c_k)`. Each cluster block is L2-normalized,
//! the flattened descriptor is normalized again and a dense layer projects
//! it to the pooled dimension. The sum over frames makes the result
//! independent of frame order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, softmax_backward, softmax_rows, Dense, Module, Param, Slot};
use crate::tensor::{axpy, dot, Matrix, Real};

/// Added under the square root of every norm so normalization is smooth at 0.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetVladConfig {
    pub dim: usize,
    pub clusters: usize,
    pub pooled_dim: usize,
}

impl NetVladConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 || self.pooled_dim == 0 {
            return Err(Error::InvalidConfig(String::from("netvlad dims and cluster count must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct VideoCache<T> {
    start: usize,
    frames: usize,
    /// Unnormalized residual sums, `K×dim`.
    residual: Matrix<T>,
    /// Intra-normalized blocks, `K×dim`.
    intra: Matrix<T>,
    intra_norms: Vec<T>,
    global_norm: T,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    frames: Matrix<T>,
    assignment: Matrix<T>,
    videos: Vec<VideoCache<T>>,
    descriptors: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct NetVlad<T> {
    config: NetVladConfig,
    pub assignment: Dense<T>,
    pub centers: Param<T>,
    pub projection: Dense<T>,
    cache: Option<Cache<T>>,
}

fn smooth_norm<T: Real>(v: &[T]) -> T {
    (dot(v, v) + T::lit(NORM_EPSILON)).sqrt()
}

/// Backward through `y = x / ‖x‖` given `y`, `‖x‖` and `∂L/∂y`.
fn normalize_backward<T: Real>(y: &[T], norm: T, dy: &[T]) -> Vec<T> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(&yv, &dv)| (dv - yv * inner) / norm).collect()
}

impl<T: Real> NetVlad<T> {
    pub fn new<R: Rng + ?Sized>(config: NetVladConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let NetVladConfig { dim, clusters, pooled_dim } = config;
        Ok(Self {
            config,
            assignment: Dense::new(dim, clusters, rng),
            centers: Param::glorot(clusters, dim, dim, clusters, rng),
            projection: Dense::new(clusters * dim, pooled_dim, rng),
            cache: None,
        })
    }

    pub fn config(&self) -> &NetVladConfig {
        &self.config
    }

    fn aggregate(&self, x: &Matrix<T>, a: &Matrix<T>, start: usize, frames: usize) -> VideoCache<T> {
        let (k, dim) = (self.config.clusters, self.config.dim);
        let mut residual = Matrix::zeros(k, dim);
        let mut mass = vec![T::zero(); k];
        for t in start..start + frames {
            let xt = x.row(t);
            for c in 0..k {
                let w = a.get(t, c);
                mass[c] += w;
                axpy(w, xt, residual.row_mut(c));
            }
        }
        for c in 0..k {
            axpy(-mass[c], self.centers.value.row(c), residual.row_mut(c));
        }
        let mut intra = residual.clone();
        let mut intra_norms = Vec::with_capacity(k);
        for c in 0..k {
            let n = smooth_norm(intra.row(c));
            intra.row_mut(c).iter_mut().for_each(|v| *v /= n);
            intra_norms.push(n);
        }
        let global_norm = smooth_norm(intra.data());
        VideoCache {
            start,
            frames,
            residual,
            intra,
            intra_norms,
            global_norm,
        }
    }

    /// Normalized `K·dim` descriptors (before projection), one row per video.
    pub fn descriptors(&mut self, videos: &[Matrix<T>]) -> Result<Matrix<T>> {
        if videos.is_empty() {
            return Err(Error::InvalidConfig(String::from("netvlad needs at least one video")));
        }
        for v in videos {
            if v.rows() == 0 {
                return Err(Error::EmptyTrack);
            }
            v.ensure_shape("netvlad frames", (v.rows(), self.config.dim))?;
        }
        let frames = Matrix::vstack(videos)?;
        let assignment = softmax_rows(&self.assignment.forward(&frames)?);
        let width = self.config.clusters * self.config.dim;
        let mut descriptors = Matrix::zeros(videos.len(), width);
        let mut caches = Vec::with_capacity(videos.len());
        let mut start = 0;
        for (i, v) in videos.iter().enumerate() {
            let cache = self.aggregate(&frames, &assignment, start, v.rows());
            for (d, &u) in descriptors.row_mut(i).iter_mut().zip(cache.intra.data()) {
                *d = u / cache.global_norm;
            }
            start += v.rows();
            caches.push(cache);
        }
        self.cache = Some(Cache {
            frames,
            assignment,
            videos: caches,
            descriptors: descriptors.clone(),
        });
        Ok(descriptors)
    }

    /// Unnormalized residual sums `V(k)` of the last forward pass, one `K×dim` matrix per video.
    pub fn last_residuals(&self) -> Vec<Matrix<T>> {
        self.cache
            .as_ref()
            .map(|c| c.videos.iter().map(|v| v.residual.clone()).collect())
            .unwrap_or_default()
    }

    /// Pools each `n_i×dim` video to a `pooled_dim` row.
    pub fn forward(&mut self, videos: &[Matrix<T>]) -> Result<Matrix<T>> {
        let d = self.descriptors(videos)?;
        self.projection.forward(&d)
    }

    /// Backward from `∂L/∂pooled`; returns frame gradients per video.
    pub fn backward(&mut self, grad_pooled: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let d_desc = self.projection.backward(grad_pooled)?;
        self.backward_descriptors(&d_desc)
    }

    pub fn backward_descriptors(&mut self, d_desc: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let cache = self
            .cache
            .take()
            .expect("NetVlad::backward called before forward");
        let (k, dim) = (self.config.clusters, self.config.dim);
        d_desc.ensure_shape("netvlad descriptor grad", cache.descriptors.shape())?;
        let total = cache.frames.rows();
        let mut d_frames = Matrix::zeros(total, dim);
        let mut d_assign = Matrix::zeros(total, k);
        for (i, vc) in cache.videos.iter().enumerate() {
            let du = normalize_backward(cache.descriptors.row(i), vc.global_norm, d_desc.row(i));
            let mut d_res = Matrix::zeros(k, dim);
            for c in 0..k {
                let g = normalize_backward(vc.intra.row(c), vc.intra_norms[c], &du[c * dim..(c + 1) * dim]);
                d_res.row_mut(c).copy_from_slice(&g);
            }
            for t in vc.start..vc.start + vc.frames {
                let xt = cache.frames.row(t);
                for c in 0..k {
                    let dv = d_res.row(c);
                    let a = cache.assignment.get(t, c);
                    d_assign.set(t, c, dot(dv, xt) - dot(dv, self.centers.value.row(c)));
                    axpy(a, dv, d_frames.row_mut(t));
                    axpy(-a, dv, self.centers.grad.row_mut(c));
                }
            }
        }
        let d_logits = softmax_backward(&cache.assignment, &d_assign)?;
        d_frames.add_assign(&self.assignment.backward(&d_logits)?)?;
        let grads = cache
            .videos
            .iter()
            .map(|vc| d_frames.row_range(vc.start, vc.frames))
            .collect();
        self.cache = Some(cache);
        Ok(grads)
    }
}

impl<T: Real> Module<T> for NetVlad<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.assignment.visit(&join(prefix, "assignment"), f);
        f(&join(prefix, "centers"), Slot::Param(&mut self.centers));
        self.projection.visit(&join(prefix, "projection"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(dim: usize, k: usize) -> NetVladConfig {
        NetVladConfig { dim, clusters: k, pooled_dim: 5 }
    }

    fn frames(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn frame_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pool = NetVlad::<f64>::new(cfg(3, 4), &mut rng).unwrap();
        let x = frames(&mut rng, 9, 3);
        let base = pool.forward(core::slice::from_ref(&x)).unwrap();
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(&mut rng);
        let rows: Vec<&[f64]> = order.iter().map(|&i| x.row(i)).collect();
        let permuted = Matrix::from_rows(&rows).unwrap();
        let out = pool.forward(&[permuted]).unwrap();
        for (a, b) in base.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_single_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut pool = NetVlad::<f64>::new(cfg(3, 3), &mut rng).unwrap();
        pool.assignment.weight.value.fill(0.0);
        pool.assignment.bias.value = Matrix::new(1, 3, vec![0.0, -1e4, -1e4]).unwrap();
        let x = Matrix::new(1, 3, vec![0.4, -0.2, 0.9]).unwrap();
        let d = pool.descriptors(core::slice::from_ref(&x)).unwrap();
        let c = pool.centers.value.row(0);
        let r: Vec<f64> = x.row(0).iter().zip(c).map(|(a, b)| a - b).collect();
        let n = dot(&r, &r).sqrt();
        for j in 0..3 {
            assert!((d.get(0, j) - r[j] / n).abs() < 1e-6);
        }
        assert!(d.row(0)[3..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn duplicated_frames_double_residuals_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut pool = NetVlad::<f64>::new(cfg(4, 2), &mut rng).unwrap();
        let x = frames(&mut rng, 6, 4);
        let single = pool.forward(core::slice::from_ref(&x)).unwrap();
        let res_single = pool.cache.as_ref().unwrap().videos[0].residual.clone();
        let doubled = Matrix::vstack(&[x.clone(), x]).unwrap();
        let twice = pool.forward(&[doubled]).unwrap();
        let res_twice = pool.cache.as_ref().unwrap().videos[0].residual.clone();
        for (a, b) in res_single.data().iter().zip(res_twice.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in single.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn batches_of_videos_pool_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut pool = NetVlad::<f64>::new(cfg(3, 2), &mut rng).unwrap();
        let a = frames(&mut rng, 4, 3);
        let b = frames(&mut rng, 7, 3);
        let both = pool.forward(&[a.clone(), b.clone()]).unwrap();
        let pa = pool.forward(&[a]).unwrap();
        let pb = pool.forward(&[b]).unwrap();
        assert_eq!(both.row(0), pa.row(0));
        assert_eq!(both.row(1), pb.row(0));
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut pool = NetVlad::<f64>::new(cfg(3, 2), &mut rng).unwrap();
        assert!(pool.forward(&[Matrix::zeros(2, 4)]).is_err());
        assert!(pool.forward(&[Matrix::zeros(0, 3)]).is_err());
        assert!(NetVlad::<f64>::new(cfg(3, 0), &mut rng).is_err());
    }
}

use alloc::vec::Vec;

use super::{join, Mode, Module, Param, Slot};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug)]
struct Cache<T> {
    mode: Mode,
    x_hat: Matrix<T>,
    inv_std: Vec<T>,
}

/// Per-feature batch normalization over the rows of a `B×D` batch.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Matrix<T>,
    pub running_var: Matrix<T>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<Cache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Matrix::filled(1, dim, T::one())),
            beta: Param::zeros(1, dim),
            running_mean: Matrix::zeros(1, dim),
            running_var: Matrix::filled(1, dim, T::one()),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.value.cols()
    }

    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<Matrix<T>> {
        let (b, d) = x.shape();
        if d != self.dim() {
            return Err(Error::ShapeMismatch {
                what: "batch norm input",
                expected: (b, self.dim()),
                found: x.shape(),
            });
        }
        let eps = T::lit(self.epsilon);
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::BatchTooSmall(b));
                }
                let n = T::lit(b as f64);
                let mean: Vec<T> = x.column_sums().data().iter().map(|&s| s / n).collect();
                let mut var = alloc::vec![T::zero(); d];
                for r in 0..b {
                    for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        let c = xv - m;
                        *v += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                let mom = T::lit(self.momentum);
                let unbias = n / (n - T::one());
                for j in 0..d {
                    let rm = self.running_mean.get(0, j);
                    let rv = self.running_var.get(0, j);
                    self.running_mean.set(0, j, mom * rm + (T::one() - mom) * mean[j]);
                    self.running_var.set(0, j, mom * rv + (T::one() - mom) * var[j] * unbias);
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let mean = self.running_mean.data().to_vec();
                let inv_std = self
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (mean, inv_std)
            }
        };
        let mut x_hat = x.clone();
        for r in 0..b {
            for ((v, &m), &s) in x_hat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = x_hat.clone();
        let gamma = self.gamma.value.row(0);
        let beta = self.beta.value.row(0);
        for r in 0..b {
            for ((v, &g), &bt) in y.row_mut(r).iter_mut().zip(gamma).zip(beta) {
                *v = *v * g + bt;
            }
        }
        self.cache = Some(Cache { mode, x_hat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        let cache = self
            .cache
            .as_ref()
            .expect("BatchNorm::backward called before forward");
        let (b, d) = cache.x_hat.shape();
        grad_out.ensure_shape("batch norm backward", (b, d))?;
        let gamma = self.gamma.value.row(0).to_vec();
        let mut sum_dy = alloc::vec![T::zero(); d];
        let mut sum_dy_xhat = alloc::vec![T::zero(); d];
        for r in 0..b {
            for j in 0..d {
                let g = grad_out.get(r, j);
                sum_dy[j] += g;
                sum_dy_xhat[j] += g * cache.x_hat.get(r, j);
            }
        }
        for j in 0..d {
            self.gamma.grad.data_mut()[j] += sum_dy_xhat[j];
            self.beta.grad.data_mut()[j] += sum_dy[j];
        }
        let mut dx = Matrix::zeros(b, d);
        match cache.mode {
            Mode::Eval => {
                for r in 0..b {
                    for j in 0..d {
                        dx.set(r, j, grad_out.get(r, j) * gamma[j] * cache.inv_std[j]);
                    }
                }
            }
            Mode::Train => {
                let n = T::lit(b as f64);
                for r in 0..b {
                    for j in 0..d {
                        let dxh = grad_out.get(r, j) * gamma[j];
                        let v = (n * dxh
                            - sum_dy[j] * gamma[j]
                            - cache.x_hat.get(r, j) * sum_dy_xhat[j] * gamma[j])
                            * cache.inv_std[j]
                            / n;
                        dx.set(r, j, v);
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}

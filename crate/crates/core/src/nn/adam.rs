use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Module;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

/// One bias-corrected Adam update; `step` is the 1-based step number.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    moments: &mut Moments<T>,
    step: u64,
    config: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || moments.first.len() != n || moments.second.len() != n {
        return Err(Error::ShapeMismatch {
            what: "adam update",
            expected: (n, 1),
            found: (grad.len(), 1),
        });
    }
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let c1 = T::lit(1.0 - libm::pow(config.beta1, step as f64));
    let c2 = T::lit(1.0 - libm::pow(config.beta2, step as f64));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    for i in 0..n {
        let g = grad[i];
        let m = b1 * moments.first[i] + (T::one() - b1) * g;
        let v = b2 * moments.second[i] + (T::one() - b2) * g * g;
        moments.first[i] = m;
        moments.second[i] = v;
        param[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a [`Module`], in visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update using the gradients currently stored in `model`.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let config = self.config;
        let moments = &mut self.moments;
        let mut index = 0;
        let mut result = Ok(());
        model.visit_params("", &mut |_, p| {
            if result.is_err() {
                return;
            }
            if moments.len() == index {
                let n = p.value.data().len();
                moments.push(Moments {
                    first: vec![T::zero(); n],
                    second: vec![T::zero(); n],
                });
            }
            result = adam_update(p.value.data_mut(), p.grad.data(), &mut moments[index], step, &config);
            index += 1;
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = [0.3f64, -1.2];
        let mut m = Moments { first: vec![0.0; 2], second: vec![0.0; 2] };
        for step in 1..=10 {
            adam_update(&mut w, &[0.0, 0.0], &mut m, step, &AdamConfig::default()).unwrap();
        }
        assert_eq!(w, [0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = [0.0f64];
        let mut m = Moments { first: vec![0.0], second: vec![0.0] };
        adam_update(&mut w, &[1.0], &mut m, 1, &AdamConfig::default()).unwrap();
        assert!((w[0] + 1e-4).abs() < 1e-10, "{}", w[0]);
    }

    /// Scalar reference written out longhand, independent of `adam_update`.
    fn reference_quadratic(steps: usize, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_descent_matches_reference() {
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut w = [1.0f64];
        let mut m = Moments { first: vec![0.0], second: vec![0.0] };
        for step in 1..=100 {
            let g = [2.0 * w[0]];
            adam_update(&mut w, &g, &mut m, step, &cfg).unwrap();
        }
        let reference = reference_quadratic(100, 0.1);
        assert!(reference.abs() < 0.5);
        assert!(w[0].abs() < 0.5);
        assert!((w[0] - reference).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = [0.0f32; 2];
        let mut m = Moments { first: vec![0.0; 2], second: vec![0.0; 2] };
        assert!(adam_update(&mut w, &[1.0], &mut m, 1, &AdamConfig::default()).is_err());
    }
}

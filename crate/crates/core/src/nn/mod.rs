//! Minimal neural-network kernel: dense layers, activations, batch
//! normalization, binary cross-entropy and Adam.
//!
//! Layers cache what their backward pass needs during `forward`, and
//! accumulate parameter gradients into [`Param::grad`] during `backward`.

use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::tensor::{Matrix, Real};

mod activation;
mod adam;
mod batchnorm;
mod dense;
mod loss;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, softmax_rows};
pub use adam::{adam_update, Adam, AdamConfig, Moments};
pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use dense::Dense;
pub use loss::{bce_loss, BCE_CLAMP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        Self::new(Matrix::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-limit..limit))))
    }
}

/// Named parameter tensor or non-learnable state buffer.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    Buffer(&'a mut Matrix<T>),
}

/// Anything holding parameters. Visiting order is stable and defines
/// optimizer-state and checkpoint layout.
pub trait Module<T: Real> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>));

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.visit(prefix, &mut |name, slot| {
            if let Slot::Param(p) = slot {
                f(name, p)
            }
        });
    }

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.grad.fill(T::zero()));
    }

    fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.data().len());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

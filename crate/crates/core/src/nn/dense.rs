use rand::Rng;

use super::{join, Module, Param, Slot};
use crate::error::Result;
use crate::tensor::{Matrix, Real};

/// Fully connected layer `y = x Wᵀ + b` with `W: out×in`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Matrix<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(dim_in: usize, dim_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::glorot(dim_out, dim_in, dim_in, dim_out, rng),
            bias: Param::zeros(1, dim_out),
            input: None,
        }
    }

    pub fn from_parts(weight: Matrix<T>, bias: Matrix<T>) -> Result<Self> {
        bias.ensure_shape("dense bias", (1, weight.rows()))?;
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn dim_out(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&mut self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching the input.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul_nt(&self.weight.value)?;
        let b = self.bias.value.row(0);
        for r in 0..y.rows() {
            for (v, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        let x = self
            .input
            .as_ref()
            .expect("Dense::backward called before forward");
        grad_out.ensure_shape("dense backward", (x.rows(), self.dim_out()))?;
        self.weight.grad.add_assign(&grad_out.matmul_tn(x)?)?;
        self.bias.grad.add_assign(&grad_out.column_sums())?;
        grad_out.matmul(&self.weight.value)
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

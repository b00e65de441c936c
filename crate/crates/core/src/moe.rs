//! Mixture-of-experts classification head.
//!
//! A softmax gate over the fused feature weights the experts' logits; the
//! combined logit goes through a single sigmoid:
//! `p = σ(Σ_e g_e · o_e)`. Each expert is
//! `Dense → BatchNorm → ReLU → Dense(hidden → classes)`. With one expert the
//! gate is identically 1 and the head is a plain MLP.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_backward, sigmoid, sigmoid_backward, softmax_backward, softmax_rows, BatchNorm, Dense, Mode, Module, Slot};
use crate::tensor::{Matrix, Real};
use crate::NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub input_dim: usize,
    pub experts: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MoeConfig {
    pub fn new(input_dim: usize, experts: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            experts,
            hidden,
            classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.experts == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(String::from("moe dimensions and expert count must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Expert<T> {
    pub hidden: Dense<T>,
    pub norm: BatchNorm<T>,
    pub output: Dense<T>,
    pre_activation: Option<Matrix<T>>,
}

impl<T: Real> Expert<T> {
    pub fn new<R: Rng + ?Sized>(config: &MoeConfig, rng: &mut R) -> Self {
        Self {
            hidden: Dense::new(config.input_dim, config.hidden, rng),
            norm: BatchNorm::new(config.hidden),
            output: Dense::new(config.hidden, config.classes, rng),
            pre_activation: None,
        }
    }

    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<Matrix<T>> {
        let h = self.hidden.forward(x)?;
        let n = self.norm.forward(&h, mode)?;
        let a = relu(&n);
        self.pre_activation = Some(n);
        self.output.forward(&a)
    }

    pub fn backward(&mut self, grad_logits: &Matrix<T>) -> Result<Matrix<T>> {
        let da = self.output.backward(grad_logits)?;
        let pre = self
            .pre_activation
            .as_ref()
            .expect("Expert::backward called before forward");
        let dn = relu_backward(pre, &da)?;
        let dh = self.norm.backward(&dn)?;
        self.hidden.backward(&dh)
    }
}

impl<T: Real> Module<T> for Expert<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
}

#[derive(Clone, Debug)]
struct Cache<T> {
    gate: Matrix<T>,
    expert_logits: Vec<Matrix<T>>,
    probs: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct MoeHead<T> {
    config: MoeConfig,
    pub gate: Dense<T>,
    pub experts: Vec<Expert<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Real> MoeHead<T> {
    pub fn new<R: Rng + ?Sized>(config: MoeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let gate = Dense::new(config.input_dim, config.experts, rng);
        let experts = (0..config.experts).map(|_| Expert::new(&config, rng)).collect();
        Ok(Self {
            config,
            gate,
            experts,
            cache: None,
        })
    }

    pub fn config(&self) -> &MoeConfig {
        &self.config
    }

    /// Gate weights of the last forward pass (`B×experts`).
    pub fn gate_weights(&self) -> Option<&Matrix<T>> {
        self.cache.as_ref().map(|c| &c.gate)
    }

    /// Combined pre-sigmoid logits `Σ_e g_e · o_e`.
    pub fn logits(&mut self, v: &Matrix<T>, mode: Mode) -> Result<Matrix<T>> {
        v.ensure_shape("moe input", (v.rows(), self.config.input_dim))?;
        let gate = softmax_rows(&self.gate.forward(v)?);
        let mut expert_logits = Vec::with_capacity(self.experts.len());
        let mut combined = Matrix::zeros(v.rows(), self.config.classes);
        for (e, expert) in self.experts.iter_mut().enumerate() {
            let o = expert.forward(v, mode)?;
            for b in 0..v.rows() {
                let g = gate.get(b, e);
                for (c, &ov) in combined.row_mut(b).iter_mut().zip(o.row(b)) {
                    *c += g * ov;
                }
            }
            expert_logits.push(o);
        }
        self.cache = Some(Cache {
            gate,
            expert_logits,
            probs: Matrix::zeros(0, 0),
        });
        Ok(combined)
    }

    /// Per-class probabilities, `B×classes`.
    pub fn forward(&mut self, v: &Matrix<T>, mode: Mode) -> Result<Matrix<T>> {
        let probs = self.logits(v, mode)?.map(sigmoid);
        if let Some(c) = self.cache.as_mut() {
            c.probs = probs.clone();
        }
        Ok(probs)
    }

    /// Backward from `∂L/∂p`; returns `∂L/∂v`.
    pub fn backward(&mut self, grad_probs: &Matrix<T>) -> Result<Matrix<T>> {
        let probs = &self
            .cache
            .as_ref()
            .expect("MoeHead::backward called before forward")
            .probs;
        let grad_logits = sigmoid_backward(probs, grad_probs)?;
        self.backward_logits(&grad_logits)
    }

    /// Backward from `∂L/∂o` of the combined logits.
    pub fn backward_logits(&mut self, grad_logits: &Matrix<T>) -> Result<Matrix<T>> {
        let cache = self
            .cache
            .take()
            .expect("MoeHead::backward called before forward");
        let batch = grad_logits.rows();
        let n_exp = self.experts.len();
        let mut d_gate = Matrix::zeros(batch, n_exp);
        let mut dv = Matrix::zeros(batch, self.config.input_dim);
        for (e, expert) in self.experts.iter_mut().enumerate() {
            let o = &cache.expert_logits[e];
            let mut d_o = grad_logits.clone();
            for b in 0..batch {
                let g = cache.gate.get(b, e);
                d_gate.set(b, e, crate::tensor::dot(grad_logits.row(b), o.row(b)));
                d_o.row_mut(b).iter_mut().for_each(|v| *v *= g);
            }
            dv.add_assign(&expert.backward(&d_o)?)?;
        }
        let d_gate_logits = softmax_backward(&cache.gate, &d_gate)?;
        dv.add_assign(&self.gate.backward(&d_gate_logits)?)?;
        self.cache = Some(cache);
        Ok(dv)
    }
}

impl<T: Real> Module<T> for MoeHead<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.gate.visit(&join(prefix, "gate"), f);
        for (i, e) in self.experts.iter_mut().enumerate() {
            e.visit(&join(prefix, &alloc::format!("expert.{i}")), f);
        }
    }
}

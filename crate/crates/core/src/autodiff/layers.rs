//! Parameterized layers: 1-D convolution, batch norm and fully connected.
//!
//! Layers own their tensors and bind them into a [`Graph`] under
//! hierarchical names (`backbone.conv1.weight`, ...). The same names are
//! used by checkpoints and by the optimizer state.

use rand::Rng;

use super::graph::{BatchStats, Graph};
use super::real::{r, Real};
use super::tensor::{NodeId, Tensor};
use crate::error::{invalid, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Visits named tensors of a module, trainable parameters and buffers alike.
pub trait Parameters<F: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform<F: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    let n = shape.iter().product::<usize>();
    let data = (0..n).map(|_| F::lit(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches").with_grad()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F> {
    /// `[out_channels, in_channels, kernel]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (in_channels * kernel) as f64).sqrt();
        Self {
            weight: uniform(&[out_channels, in_channels, kernel], bound, rng),
            bias: uniform(&[out_channels], bound, rng),
            stride,
            padding,
        }
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        let k = self.weight.shape()[2];
        (len + 2 * self.padding >= k).then(|| (len + 2 * self.padding - k) / self.stride + 1)
    }

    pub fn forward(&self, g: &mut Graph<F>, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = g.param(&join(prefix, "weight"), &self.weight);
        let b = g.param(&join(prefix, "bias"), &self.bias);
        g.conv1d(x, w, Some(b), self.stride, self.padding)
    }
}

impl<F: Real> Parameters<F> for Conv1d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub eps: f64,
    pub momentum: f64,
}

impl<F: Real> BatchNorm1d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn forward(&self, g: &mut Graph<F>, prefix: &str, x: NodeId, training: bool) -> Result<NodeId> {
        let gamma = g.param(&join(prefix, "gamma"), &self.gamma);
        let beta = g.param(&join(prefix, "beta"), &self.beta);
        if training {
            g.batchnorm_train(prefix, x, gamma, beta, self.eps)
        } else {
            g.batchnorm_eval(
                x,
                gamma,
                beta,
                self.running_mean.data(),
                self.running_var.data(),
                self.eps,
            )
        }
    }

    /// Exponential moving average of batch statistics into the running ones.
    pub fn update_running(&mut self, stats: &BatchStats<F>) -> Result<()> {
        let c = self.gamma.numel();
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(invalid!(
                "batch statistics for {} channels, layer has {c}",
                stats.mean.len()
            ));
        }
        let m: F = r(self.momentum);
        let keep = F::one() - m;
        for (rm, &bm) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *rm = keep * *rm + m * bm;
        }
        for (rv, &bv) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *rv = keep * *rv + m * bv;
        }
        Ok(())
    }
}

impl<F: Real> Parameters<F> for BatchNorm1d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `[out_features, in_features]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (1.0 / in_features as f64).sqrt();
        Self {
            weight: uniform(&[out_features, in_features], bound, rng),
            bias: uniform(&[out_features], bound, rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph<F>, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = g.param(&join(prefix, "weight"), &self.weight);
        let b = g.param(&join(prefix, "bias"), &self.bias);
        g.linear(x, w, Some(b))
    }

    /// Plain evaluation on a `[rows, in]` matrix, no graph involved.
    pub fn apply(&self, x: &[F]) -> Vec<F> {
        super::kernels::linear_forward(
            x,
            self.weight.data(),
            Some(self.bias.data()),
            self.in_features(),
            self.out_features(),
        )
    }
}

impl<F: Real> Parameters<F> for Linear<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<F>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<F>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

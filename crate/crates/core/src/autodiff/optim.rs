use std::collections::BTreeMap;

use super::layers::Parameters;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: BTreeMap<String, Vec<F>>,
    pub v: BTreeMap<String, Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that carries a gradient. Tensors
    /// without `requires_grad` or without a gradient are left alone.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, &'a mut Tensor<F>)>,
    {
        let params: Vec<_> = params.into_iter().filter(|(_, t)| updatable(t)).collect();
        for (name, t) in &params {
            self.check_state(name, t)?;
        }
        self.step_count += 1;
        for (name, p) in params {
            self.update(name, p);
        }
        Ok(())
    }

    /// [`Adam::step`] over every named tensor of a module.
    pub fn step_module<P: Parameters<F> + ?Sized>(&mut self, module: &mut P) -> Result<()> {
        let mut result = Ok(());
        module.visit("", &mut |name, t| {
            if result.is_ok() && updatable(t) {
                result = self.check_state(&name, t);
            }
        });
        result?;
        self.step_count += 1;
        module.visit_mut("", &mut |name, t| {
            if updatable(t) {
                self.update(name, t);
            }
        });
        Ok(())
    }

    fn check_state(&self, name: &str, t: &Tensor<F>) -> Result<()> {
        for (kind, map) in [("first", &self.m), ("second", &self.v)] {
            if let Some(buf) = map.get(name) {
                if buf.len() != t.numel() {
                    return Err(invalid!(
                        "{kind} moment of `{name}` has {} entries, parameter has {}",
                        buf.len(),
                        t.numel()
                    ));
                }
            }
        }
        Ok(())
    }

    fn update(&mut self, name: String, p: &mut Tensor<F>) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let n = p.numel();
        let m = self.m.entry(name.clone()).or_insert_with(|| vec![F::zero(); n]);
        let v = self.v.entry(name).or_insert_with(|| vec![F::zero(); n]);
        let grad = p.grad.take().expect("caller checked");
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i].as_f64();
            let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * g;
            let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * g * g;
            m[i] = F::lit(mi);
            v[i] = F::lit(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            *w = F::lit(w.as_f64() - update);
        }
        p.grad = Some(grad);
    }
}

fn updatable<F>(t: &Tensor<F>) -> bool {
    t.requires_grad && t.grad.is_some()
}

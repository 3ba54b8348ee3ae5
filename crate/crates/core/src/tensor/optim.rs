use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NamedTensors<S> = BTreeMap<String, Tensor<S>>;

/// One plain gradient-descent step, returning updated copies so the caller
/// keeps the originals.
pub fn sgd_step<S: Scalar>(params: &NamedTensors<S>, grads: &NamedTensors<S>, lr: S) -> Result<NamedTensors<S>> {
    if !(lr >= S::zero()) {
        return Err(Error::contract("learning rate must be non-negative"));
    }
    params
        .iter()
        .map(|(name, p)| {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "sgd_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let data = p.data().iter().zip(g.data()).map(|(&w, &d)| w - lr * d).collect();
            Ok((name.clone(), Tensor::from_parts(p.shape().to_vec(), data)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam with bias correction. Moment buffers are created on first sight of a
/// parameter name and must keep that parameter's shape afterwards.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    step: u64,
    first: NamedTensors<S>,
    second: NamedTensors<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<S>> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<S>> {
        self.second.get(name)
    }

    /// Updates every parameter in `params` that has an entry in `grads`.
    /// Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut NamedTensors<S>, grads: &NamedTensors<S>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            for buf in [&self.first, &self.second] {
                if let Some(m) = buf.get(name) {
                    if m.shape() != p.shape() {
                        return Err(Error::Shape {
                            op: "adam_step",
                            left: m.shape().to_vec(),
                            right: p.shape().to_vec(),
                        });
                    }
                }
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let (b1, b2) = (S::lit(beta1), S::lit(beta2));
        let t = self.step as i32;
        let c1 = S::one() - S::lit(beta1.powi(t));
        let c2 = S::one() - S::lit(beta2.powi(t));
        let (lr, eps) = (S::lit(lr), S::lit(eps));

        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &d), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (S::one() - b1) * d;
                *vi = b2 * *vi + (S::one() - b2) * d * d;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

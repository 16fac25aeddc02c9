//! AdamW with decoupled weight decay.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First/second moment estimates per parameter name and the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamW<T> {
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new() -> Self {
        AdamW {
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params`:
    ///
    /// ```text
    /// p ← p − lr·wd·p
    /// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
    /// p ← p − lr·m̂/(√v̂ + ε)
    /// ```
    ///
    /// Missing gradients count as zero. A non-finite gradient aborts the
    /// step before anything is modified.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &HashMap<String, Tensor<T>>,
        lr: f64,
        cfg: &AdamWConfig,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` at step {}",
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::one() - T::lit(cfg.beta1.powi(t));
        let c2 = T::one() - T::lit(cfg.beta2.powi(t));
        let (lr_t, decay, eps) = (T::lit(lr), T::lit(lr * cfg.weight_decay), T::lit(cfg.eps));
        for (name, p) in params.params_mut() {
            let g = grads.get(name);
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape("adamw", p.shape(), g.shape()));
                }
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                *w -= decay * *w;
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

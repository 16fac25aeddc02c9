//! Binds a [`ParamStore`] onto a tape for one forward pass.

use std::cell::RefCell;
use std::collections::HashMap;

use super::store::ParamStore;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and reports them.
    Train,
    /// Batch norm uses running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Ctx<'t, T: Real> {
    tape: &'t Tape<T>,
    vars: HashMap<String, Var<'t, T>>,
    buffers: HashMap<String, Tensor<T>>,
    mode: Mode,
    bn_stats: RefCell<Vec<BnStats<T>>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    /// Registers every parameter of `store` as a tape leaf.
    pub fn bind(tape: &'t Tape<T>, store: &ParamStore<T>, mode: Mode, trainable: bool) -> Self {
        let vars = store
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        let buffers = store
            .buffers()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ctx {
            tape,
            vars,
            buffers,
            mode,
            bn_stats: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }

    /// Replaces the binding of one parameter, e.g. with a variable under
    /// gradient check.
    pub fn rebind(&mut self, name: &str, var: Var<'t, T>) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))?;
        if slot.shape() != var.shape() {
            return Err(Error::shape("rebind", &slot.shape(), &var.shape()));
        }
        *slot = var;
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Config(format!("buffer `{name}` is not bound")))
    }

    pub(crate) fn record_bn(&self, stats: BnStats<T>) {
        self.bn_stats.borrow_mut().push(stats);
    }

    pub fn take_bn_stats(&self) -> Vec<BnStats<T>> {
        std::mem::take(&mut self.bn_stats.borrow_mut())
    }

    /// Gradient for every bound parameter, zeros where none flowed.
    pub fn param_grads(&self, grads: &Gradients<T>) -> HashMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

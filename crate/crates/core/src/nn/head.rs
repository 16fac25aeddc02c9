//! Linear classifier producing class probabilities.

use super::ctx::Ctx;
use super::layers::Linear;
use super::store::{Init, ParamStore};
use crate::autodiff::Var;
use crate::error::Result;
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new(name: &str, dim: usize, classes: usize) -> Self {
        ClassifierHead {
            linear: Linear::new(name, dim, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.linear.d_out
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.linear.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.linear.param_count()
    }

    /// `z[N×D]` → logits `[N×C]`.
    pub fn logits<'t, T: Real>(&self, ctx: &Ctx<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        self.linear.forward(ctx, z)
    }

    /// `z[N×D]` → probabilities `[N×C]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        self.logits(ctx, z)?.softmax(1)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`] of an `N×C` matrix stored row-major.
pub fn predictions<T: Real>(probs: &[T], classes: usize) -> Vec<usize> {
    probs.chunks(classes).map(argmax).collect()
}

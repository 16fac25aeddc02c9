//! Losses on class probabilities.

use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Root mean squared difference between probabilities and one-hot labels.
    Rmse,
    /// Mean negative log-probability of the true class.
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Rmse => "rmse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn apply<'t, T: Real>(self, probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
        match self {
            LossKind::Rmse => rmse_loss(probs, labels),
            LossKind::CrossEntropy => cross_entropy_loss(probs, labels),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(LossKind::Rmse),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            "loss",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    Tensor::new(
        vec![labels.len(), classes],
        (0..labels.len() * classes)
            .map(|i| {
                if labels[i / classes] == i % classes {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect(),
    )
}

fn check<T: Real>(probs: &Var<'_, T>, labels: &[usize]) -> Result<usize> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape("loss", &shape, &[labels.len()]));
    }
    Ok(shape[1])
}

/// `sqrt(mean((probs − onehot)²))` over all `N·C` entries.
pub fn rmse_loss<'t, T: Real>(probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let classes = check(&probs, labels)?;
    let target = probs.tape().constant(one_hot(labels, classes)?);
    let diff = probs.sub(target)?;
    Ok(diff.mul(diff)?.mean().sqrt())
}

/// `−mean(ln p[label])`.
pub fn cross_entropy_loss<'t, T: Real>(probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let classes = check(&probs, labels)?;
    let mask = probs.tape().constant(one_hot(labels, classes)?);
    let n = T::lit(labels.len() as f64);
    Ok(probs.ln().mul(mask)?.sum().scale(-T::one() / n))
}

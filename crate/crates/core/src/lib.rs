//! Dense-TNT: a DenseNet feature stage stacked with Transformer-in-Transformer
//! blocks and a softmax head, for overhead vehicle-type classification.
//!
//! The crate is self-contained: [`autodiff`] provides the tensor tape every
//! block is built on, [`nn`] the architectural units, [`model`] the
//! assembled network and its checkpoint format, [`fog`] the synthetic fog
//! degradation, [`data`] dataset handling, [`train`] the optimizer and
//! training loop, and [`metrics`] / [`report`] evaluation output.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fog;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod report;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

//! Neural network building blocks on top of the autodiff tape.

mod attention;
mod ctx;
mod dense;
mod head;
mod layers;
mod store;
mod tnt;

pub use attention::{EncoderLayer, Mlp, MultiHeadAttention};
pub use ctx::{BnStats, Ctx, Mode};
pub use dense::{DenseBlock, DenseLayer, Transition};
pub use head::{argmax, predictions, ClassifierHead};
pub use layers::{Activation, BatchNorm2d, Conv2d, LayerNorm, Linear, PROJ_STD};
pub use store::{Init, ParamStore};
pub use tnt::{SentenceWordEmbedding, TntBlock};

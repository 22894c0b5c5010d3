//! Layers: embedding lookup, LSTM, batch normalization, residual 1-D
//! convolution blocks, fully connected layers, and their initialization.

mod batchnorm;
mod embedding;
mod init;
mod linear;
mod lstm;
mod params;
mod residual;

pub use batchnorm::{BatchMoments, BatchNorm, Mode};
pub use embedding::{EmbeddingTable, PAD, UNK};
pub use init::{init_params, xavier_bound, LayerSpec};
pub use linear::Linear;
pub use lstm::Lstm;
pub use params::{Bound, ParamId, ParamStore};
pub use residual::ResidualBlock;

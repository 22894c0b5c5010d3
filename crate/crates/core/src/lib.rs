//! Semi-supervised text regression with a conditional GAN.
//!
//! The generator is an LSTM sentence decoder that emits row-stochastic token
//! distributions; the discriminator is a residual 1-D CNN over embedded
//! documents with two heads, one scoring realness and one regressing the
//! label. Everything runs on a small reverse-mode autodiff engine in
//! [`tensor`].

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! The conditional GAN: a generator that decodes noise and a target label
//! into soft token sequences, and a discriminator with an adversarial head
//! and a regression head over embedded documents.

mod config;
mod discriminator;
mod generator;
mod sequence;

pub use config::{GenerationPath, ModelConfig};
pub use discriminator::{DiscVars, Discriminator, DiscriminatorOutput};
pub use generator::Generator;
pub use sequence::{decode_tokens, soft_embed, soft_embed_var, straight_through, SoftSequence};

use crate::rng::{self, stream};
use crate::Result;

/// Builds both networks; deterministic per `(cfg, seed)`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    cfg.validate()?;
    let gen = Generator::new(cfg, &mut rng::keyed(seed, stream::INIT_GENERATOR, 0))?;
    let disc = Discriminator::new(cfg, &mut rng::keyed(seed, stream::INIT_DISCRIMINATOR, 0))?;
    Ok((gen, disc))
}

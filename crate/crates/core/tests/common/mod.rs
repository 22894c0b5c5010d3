#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use trgan::data::{synth_corpus, SynthSpec};
use trgan::model::{build_model, ModelConfig};
use trgan::train::{EncodedSet, Model};

/// Monte-Carlo estimate of E|X̄ − 4.5| for the mean of `doc_len` uniform
/// draws from 0..=9, independent of the library's generators.
pub fn mc_mean_abs_deviation(doc_len: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let s: u32 = (0..doc_len).map(|_| rng.random_range(0..10u32)).sum();
        total += (s as f64 / doc_len as f64 - 4.5).abs();
    }
    total / draws as f64
}

pub struct Data {
    pub model: Model,
    pub labeled: EncodedSet,
    pub unlabeled: EncodedSet,
    pub validation: EncodedSet,
}

pub fn small_model_config(max_len: usize) -> ModelConfig {
    ModelConfig {
        max_len,
        hidden: 8,
        noise_dim: 4,
        channels: 4,
        n_blocks: 1,
        ..ModelConfig::default()
    }
}

/// Encoded synthetic splits plus freshly initialised networks.
pub fn synthetic(spec: &SynthSpec, cfg: &ModelConfig, init_seed: u64) -> Data {
    let s = synth_corpus(spec).unwrap();
    let (g, d) = build_model(cfg, init_seed).unwrap();
    Data {
        model: Model::new(g, d, s.table.clone()).unwrap(),
        labeled: EncodedSet::encode(&s.split.labeled, &s.vocab, cfg.max_len),
        unlabeled: EncodedSet::encode(&s.split.unlabeled, &s.vocab, cfg.max_len),
        validation: EncodedSet::encode(&s.split.validation, &s.vocab, cfg.max_len),
    }
}

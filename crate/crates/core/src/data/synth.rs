use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::corpus::{CorpusSplit, Example};
use super::vocab::Vocabulary;
use crate::nn::EmbeddingTable;
use crate::rng::{self, stream};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// The ten number-words; word `k` carries value `k`.
pub const WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Embedding width of the synthetic vocabulary.
pub const SYNTH_DIM: usize = 8;

/// How synthetic labels are computed from a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelFn {
    /// Mean of the word values.
    TokenMean,
    /// A seeded affine function of the mean-pooled embedding.
    PlantedLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub doc_len: usize,
    pub sigma: f64,
    pub seed: u64,
    pub label_fn: LabelFn,
}

impl SynthSpec {
    pub fn new(labeled: usize, unlabeled: usize, validation: usize, doc_len: usize, sigma: f64, seed: u64) -> Self {
        SynthSpec {
            labeled,
            unlabeled,
            validation,
            doc_len,
            sigma,
            seed,
            label_fn: LabelFn::TokenMean,
        }
    }
}

pub struct SynthCorpus {
    pub split: CorpusSplit,
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    /// `(weights, bias)` of the planted relation, if any.
    pub planted: Option<(Vec<f64>, f64)>,
}

/// Documents of uniformly drawn number-words with a known label function.
/// Everything is a pure function of `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.doc_len == 0 {
        return Err(Error::Invalid("synthetic documents need at least one token".into()));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::Invalid(format!("noise sigma must be ≥ 0, got {}", spec.sigma)));
    }
    let vocab = Vocabulary::from_tokens(WORDS)?;

    let mut erng = rng::keyed(spec.seed, stream::SYNTH_EMBED, 0);
    let vectors: Vec<f64> = (0..WORDS.len() * SYNTH_DIM)
        .map(|_| StandardNormal.sample(&mut erng))
        .collect();
    let mut data = vec![0.0; SYNTH_DIM];
    let mut unk = vec![0.0; SYNTH_DIM];
    // same arithmetic as the file loader, so a written corpus reloads bitwise
    for row in vectors.chunks(SYNTH_DIM) {
        unk.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    unk.iter_mut().for_each(|a| *a /= WORDS.len() as f64);
    data.extend(unk);
    data.extend_from_slice(&vectors);
    let table = EmbeddingTable::new(Tensor::new([WORDS.len() + 2, SYNTH_DIM], data)?, false)?;

    let planted = match spec.label_fn {
        LabelFn::TokenMean => None,
        LabelFn::PlantedLinear => {
            let mut prng = rng::keyed(spec.seed, stream::SYNTH_PLANT, 0);
            let w: Vec<f64> = (0..SYNTH_DIM).map(|_| StandardNormal.sample(&mut prng)).collect();
            Some((w, 1.0))
        }
    };

    let mut drng = rng::keyed(spec.seed, stream::SYNTH_DOCS, 0);
    let mut nrng = rng::keyed(spec.seed, stream::SYNTH_NOISE, 0);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut make = |n: usize, labeled: bool| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let words: Vec<usize> = (0..spec.doc_len).map(|_| drng.random_range(0..WORDS.len())).collect();
                let clean = match &planted {
                    None => words.iter().sum::<usize>() as f64 / spec.doc_len as f64,
                    Some((w, b)) => {
                        let mut pooled = [0.0; SYNTH_DIM];
                        for &k in &words {
                            for (p, v) in pooled.iter_mut().zip(&vectors[k * SYNTH_DIM..(k + 1) * SYNTH_DIM]) {
                                *p += v;
                            }
                        }
                        pooled.iter().zip(w).map(|(p, wi)| p / spec.doc_len as f64 * wi).sum::<f64>() + b
                    }
                };
                let eps = if spec.sigma > 0.0 { noise.sample(&mut nrng) } else { 0.0 };
                Example {
                    tokens: words.iter().map(|&k| WORDS[k].to_string()).collect(),
                    label: labeled.then_some(clean + eps),
                    line: 0,
                }
            })
            .collect()
    };
    let labeled = make(spec.labeled, true);
    let unlabeled = make(spec.unlabeled, false);
    let validation = make(spec.validation, true);
    Ok(SynthCorpus {
        split: CorpusSplit {
            labeled,
            unlabeled,
            validation,
        },
        vocab,
        table,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(tok: &str) -> f64 {
        WORDS.iter().position(|w| *w == tok).unwrap() as f64
    }

    #[test]
    fn noiseless_labels_are_token_means() {
        let c = synth_corpus(&SynthSpec::new(50, 10, 20, 7, 0.0, 3)).unwrap();
        for ex in c.split.labeled.iter().chain(&c.split.validation) {
            let mean = ex.tokens.iter().map(|t| value(t)).sum::<f64>() / 7.0;
            assert_eq!(ex.label.unwrap(), mean);
            assert!((0.0..=9.0).contains(&mean));
        }
        assert!(c.split.unlabeled.iter().all(|e| e.label.is_none()));
        assert_eq!(c.table.vocab_size(), 12);
        assert_eq!(c.table.dim(), SYNTH_DIM);
    }

    #[test]
    fn constant_document_label() {
        // a one-token document of "four" has label exactly 4
        let c = synth_corpus(&SynthSpec::new(300, 0, 0, 1, 0.0, 0)).unwrap();
        let four = c.split.labeled.iter().find(|e| e.tokens == ["four"]).unwrap();
        assert_eq!(four.label, Some(4.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_corpus(&SynthSpec::new(5, 5, 5, 4, 0.3, 9)).unwrap();
        let b = synth_corpus(&SynthSpec::new(5, 5, 5, 4, 0.3, 9)).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a.table, b.table);
        let c = synth_corpus(&SynthSpec::new(5, 5, 5, 4, 0.3, 10)).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn noisy_labels_stay_near_range() {
        let c = synth_corpus(&SynthSpec::new(2000, 0, 0, 12, 0.1, 1)).unwrap();
        assert!(c.split.labeled.iter().all(|e| (-0.4..=9.4).contains(&e.label.unwrap())));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(synth_corpus(&SynthSpec::new(1, 0, 0, 0, 0.0, 0)).is_err());
        assert!(synth_corpus(&SynthSpec::new(1, 0, 0, 3, -1.0, 0)).is_err());
    }
}

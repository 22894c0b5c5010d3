//! Word vectors, tokenization, corpus files, batching, and the synthetic
//! benchmark corpus.

mod batch;
mod corpus;
mod embeddings;
mod synth;
mod vocab;

pub use batch::{make_batches, BatchCycler};
pub use corpus::{encode_document, format_label, load_corpus, parse_corpus, tokenize, write_corpus, Corpus, CorpusSplit, Example};
pub use embeddings::{load_embeddings, parse_embeddings, write_embeddings};
pub use synth::{synth_corpus, LabelFn, SynthCorpus, SynthSpec, WORDS};
pub use vocab::Vocabulary;

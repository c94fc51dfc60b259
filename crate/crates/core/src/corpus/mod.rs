//! Tokenisation, vocabulary, dataset files, and the synthetic corpus generator.

mod dataset;
mod stopwords;
mod synth;
mod tokenize;
mod vocab;

pub use dataset::{dataset_hash, encode_training, read_jsonl, write_jsonl, Example, RawExample};
pub use stopwords::{Stopwords, DEFAULT_STOPWORDS};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus, SynthLabels};
pub use tokenize::tokenize;
pub use vocab::{
    bow, l1_normalize, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, RESERVED_TOKENS, SEP, UNK,
};

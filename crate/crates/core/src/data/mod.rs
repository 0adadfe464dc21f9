//! Vocabulary, synthetic domains, corpus files and checkpoints.

mod checkpoint;
mod io;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, swap_vocab_predictor, CheckpointManifest, CHECKPOINT_VERSION};
pub use io::{read_features, read_text, write_features, write_text, FEATURE_VERSION};
pub use synth::{gen_domain, token_embeddings, BigramTable, DomainCorpus, Split, SyntheticTaskSpec};
pub use vocab::{Vocab, BLANK_TOKEN, BOS_TOKEN, EOS_TOKEN, RESERVED, UNK_TOKEN};

use crate::error::Result;
use crate::numerics::Tensor;

/// Acoustic features paired with their reference label ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    /// `[T x d]`.
    pub features: Tensor,
    pub tokens: Vec<usize>,
}

/// Sizes and domain seeds of a full experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub task: SyntheticTaskSpec,
    pub target_domain_seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_adapt_text: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTaskSpec::default(),
            target_domain_seed: 2,
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            n_adapt_text: 5000,
        }
    }
}

/// Every corpus an experiment uses. The target domain has no transcribed training audio.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub vocab: Vocab,
    pub source_train: Vec<Utterance>,
    pub source_dev: Vec<Utterance>,
    pub source_test: Vec<Utterance>,
    pub target_dev: Vec<Utterance>,
    pub target_test: Vec<Utterance>,
    pub adapt_text: Vec<Vec<usize>>,
}

impl ExperimentData {
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        let src = &cfg.task;
        let tgt = src.with_domain(cfg.target_domain_seed);
        Ok(Self {
            vocab: src.vocab(),
            source_train: gen_domain(src, cfg.n_train, Split::Train)?.utterances,
            source_dev: gen_domain(src, cfg.n_dev, Split::Dev)?.utterances,
            source_test: gen_domain(src, cfg.n_test, Split::Test)?.utterances,
            target_dev: gen_domain(&tgt, cfg.n_dev, Split::Dev)?.utterances,
            target_test: gen_domain(&tgt, cfg.n_test, Split::Test)?.utterances,
            adapt_text: gen_domain(&tgt, cfg.n_adapt_text, Split::Text)?.sentences,
        })
    }
}

pub fn transcripts(utts: &[Utterance]) -> Vec<Vec<usize>> {
    utts.iter().map(|u| u.tokens.clone()).collect()
}

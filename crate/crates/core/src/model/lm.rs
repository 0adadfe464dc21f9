use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::LmBranch;
use super::{history, lm_targets, PredictorConfig};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{Eval, Graph, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub predictor: PredictorConfig,
    /// Width of `g^v_u` before the output head.
    pub proj_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

/// Standalone recurrent LM with the same parameter names and shapes as the
/// factorized transducer's vocabulary predictor, so the two are swappable.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    config: LmConfig,
    vocab: Vocab,
    params: ParamSet,
    branch: LmBranch,
}

impl LanguageModel {
    pub fn new(config: LmConfig, vocab: Vocab) -> Result<Self> {
        config.predictor.validate()?;
        if config.proj_dim == 0 {
            return Err(Error::Config("proj_dim must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let branch = LmBranch::register(
            &mut params,
            vocab.len(),
            &config.predictor,
            config.proj_dim,
            config.init_scale,
            &mut rng,
        )?;
        Ok(Self {
            config,
            vocab,
            params,
            branch,
        })
    }

    pub(crate) fn from_parts(config: LmConfig, vocab: Vocab, values: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, vocab)?;
        super::load_values(&mut m.params, values)?;
        Ok(m)
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn branch(&self) -> &LmBranch {
        &self.branch
    }
}

/// Anything that exposes a vocabulary predictor.
pub trait HasLm: Sync {
    fn lm_vocab(&self) -> &Vocab;
    fn lm_params(&self) -> &ParamSet;
    fn lm_branch(&self) -> &LmBranch;

    /// Next-token log-distribution `[V]` after `<s> history`.
    fn predict_vocab(&self, history_tokens: &[usize]) -> Result<Tensor> {
        let vocab = self.lm_vocab();
        vocab.check_labels(history_tokens)?;
        let mut g = Eval::new(self.lm_params());
        let rows = self.lm_branch().forward(&mut g, &history(vocab, history_tokens))?;
        let last = rows.rows() - 1;
        Tensor::vector(rows.row(last).to_vec())
    }

    /// Sentence NLL including the end-of-sequence prediction.
    fn lm_nll_graph<G: Graph>(&self, g: &mut G, tokens: &[usize]) -> Result<G::Node> {
        let vocab = self.lm_vocab();
        vocab.check_labels(tokens)?;
        let rows = self.lm_branch().forward(g, &history(vocab, tokens))?;
        g.pick_nll(&rows, &lm_targets(vocab, tokens))
    }

    fn lm_nll(&self, tokens: &[usize]) -> Result<f64> {
        let mut g = Eval::new(self.lm_params());
        Ok(self.lm_nll_graph(&mut g, tokens)?.item())
    }
}

impl HasLm for LanguageModel {
    fn lm_vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn lm_params(&self) -> &ParamSet {
        &self.params
    }

    fn lm_branch(&self) -> &LmBranch {
        &self.branch
    }
}

/// Incremental scoring state for shallow fusion.
#[derive(Clone, Debug)]
pub struct LmState {
    pub(crate) hidden: std::sync::Arc<Tensor>,
    /// Next-token log-probabilities in LM slot numbering.
    pub(crate) log_probs: std::sync::Arc<Tensor>,
}

impl LmState {
    /// Log-probability of vocabulary id `id` as the next token.
    pub fn score(&self, id: usize) -> f64 {
        self.log_probs.data()[id - 1]
    }
}

impl LanguageModel {
    pub fn start(&self, g: &mut Eval) -> Result<LmState> {
        let h0 = self.branch.zero_state(g);
        let (hidden, log_probs) = self.branch.step(g, self.vocab.bos(), &h0)?;
        Ok(LmState { hidden, log_probs })
    }

    pub fn advance(&self, g: &mut Eval, state: &LmState, token: usize) -> Result<LmState> {
        let (hidden, log_probs) = self.branch.step(g, token, &state.hidden)?;
        Ok(LmState { hidden, log_probs })
    }
}

//! Standard and factorized transducers, and the standalone language model
//! that doubles as the factorized model's vocabulary predictor.

mod factorized;
mod layers;
mod lm;
mod standard;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use factorized::FactorizedTransducer;
pub use layers::{Affine, Encoder, LmBranch, Predictor, LM_PREFIX};
pub use lm::{HasLm, LanguageModel, LmConfig, LmState};
pub use standard::StandardTransducer;

use crate::data::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{Eval, Graph, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub causal: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("encoder dims and layer count must be >= 1".into()));
        }
        if !self.causal {
            return Err(Error::Config("only causal encoders are supported".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("predictor dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    /// Width of `f_t` and `g_u`.
    pub joint_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(input_dim: usize, seed: u64) -> Self {
        Self {
            encoder: EncoderConfig {
                input_dim,
                hidden_dim: 64,
                layers: 2,
                causal: true,
            },
            predictor: PredictorConfig {
                embed_dim: 32,
                hidden_dim: 64,
            },
            joint_dim: 64,
            init_scale: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.predictor.validate()?;
        if self.joint_dim == 0 {
            return Err(Error::Config("joint_dim must be >= 1".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Standard,
    Factorized,
    Lm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Standard => "standard",
            ModelKind::Factorized => "factorized",
            ModelKind::Lm => "lm",
        })
    }
}

/// Terms of the combined objective for one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub transducer: f64,
    pub lm_nll: f64,
    pub lambda: f64,
}

/// Graph nodes of a loss evaluation.
pub struct LossNodes<N> {
    pub total: N,
    pub transducer: N,
    pub lm_nll: Option<N>,
    pub lambda: f64,
}

impl<N> LossNodes<N> {
    pub fn breakdown<G: Graph<Node = N>>(&self, g: &G) -> LossBreakdown {
        LossBreakdown {
            total: g.value(&self.total).item(),
            transducer: g.value(&self.transducer).item(),
            lm_nll: self.lm_nll.as_ref().map_or(0.0, |n| g.value(n).item()),
            lambda: self.lambda,
        }
    }
}

/// `<s> y_1 .. y_U`: the predictor input whose row `u` conditions on `y_1..y_u`.
pub(crate) fn history(vocab: &Vocab, tokens: &[usize]) -> Vec<usize> {
    let mut h = Vec::with_capacity(tokens.len() + 1);
    h.push(vocab.bos());
    h.extend_from_slice(tokens);
    h
}

/// LM targets `y_1 .. y_U </s>` in LM slot numbering (`id - 1`).
pub(crate) fn lm_targets(vocab: &Vocab, tokens: &[usize]) -> Vec<usize> {
    tokens
        .iter()
        .chain(std::iter::once(&vocab.eos()))
        .map(|&id| id - 1)
        .collect()
}

/// A model trained on transcribed utterances.
pub trait TransducerModel: StepModel {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// `[T*(U+1) x (V+1)]` log-probabilities, blank in column 0.
    fn lattice_log_probs<G: Graph>(&self, g: &mut G, features: &Tensor, tokens: &[usize]) -> Result<G::Node>;

    /// Training objective; `lambda` weights the LM term where the model has one.
    fn loss<G: Graph>(&self, g: &mut G, utt: &Utterance, lambda: f64) -> Result<LossNodes<G::Node>>;

    fn combined_loss(&self, utt: &Utterance, lambda: f64) -> Result<LossBreakdown> {
        let mut g = Eval::new(self.params());
        let nodes = self.loss(&mut g, utt, lambda)?;
        Ok(nodes.breakdown(&g))
    }
}

/// Encoder outputs cached for frame-by-frame decoding.
#[derive(Clone, Debug)]
pub struct EncodedUtterance {
    pub(crate) enc: Arc<Tensor>,
    pub(crate) acoustic_vocab: Option<Arc<Tensor>>,
}

impl EncodedUtterance {
    pub fn new(enc: Arc<Tensor>, acoustic_vocab: Option<Arc<Tensor>>) -> Self {
        Self { enc, acoustic_vocab }
    }

    pub fn frames(&self) -> usize {
        self.enc.rows()
    }

    pub fn enc(&self) -> &Tensor {
        &self.enc
    }
}

/// Recurrent state after consuming a label history, with the cached outputs
/// the joint needs. Layout is model-specific.
#[derive(Clone, Debug)]
pub struct PredState {
    pub(crate) hidden: Vec<Arc<Tensor>>,
    pub(crate) out: Vec<Arc<Tensor>>,
}

impl PredState {
    pub fn new(hidden: Vec<Arc<Tensor>>, out: Vec<Arc<Tensor>>) -> Self {
        Self { hidden, out }
    }

    pub fn hidden(&self) -> &[Arc<Tensor>] {
        &self.hidden
    }

    pub fn out(&self) -> &[Arc<Tensor>] {
        &self.out
    }
}

/// Incremental interface used by the decoders.
pub trait StepModel: Sync {
    fn vocab(&self) -> &Vocab;
    fn params(&self) -> &ParamSet;
    fn encode_utterance(&self, g: &mut Eval, features: &Tensor) -> Result<EncodedUtterance>;
    /// State after `<s>`.
    fn initial_state(&self, g: &mut Eval) -> Result<PredState>;
    fn advance(&self, g: &mut Eval, state: &PredState, token: usize) -> Result<PredState>;
    /// Log-distribution over `{blank} ∪ 1..=V` at frame `t`.
    fn joint_row(&self, g: &mut Eval, enc: &EncodedUtterance, t: usize, state: &PredState) -> Result<Vec<f64>>;
}

/// Any checkpointable model.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Standard(StandardTransducer),
    Factorized(FactorizedTransducer),
    Lm(LanguageModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Standard(_) => ModelKind::Standard,
            AnyModel::Factorized(_) => ModelKind::Factorized,
            AnyModel::Lm(_) => ModelKind::Lm,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            AnyModel::Standard(m) => m.params(),
            AnyModel::Factorized(m) => m.params(),
            AnyModel::Lm(m) => m.params(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::Standard(m) => m.vocab(),
            AnyModel::Factorized(m) => m.vocab(),
            AnyModel::Lm(m) => m.vocab(),
        }
    }

    pub fn into_standard(self) -> Result<StandardTransducer> {
        match self {
            AnyModel::Standard(m) => Ok(m),
            other => Err(kind_error(ModelKind::Standard, other.kind())),
        }
    }

    pub fn into_factorized(self) -> Result<FactorizedTransducer> {
        match self {
            AnyModel::Factorized(m) => Ok(m),
            other => Err(kind_error(ModelKind::Factorized, other.kind())),
        }
    }

    pub fn into_lm(self) -> Result<LanguageModel> {
        match self {
            AnyModel::Lm(m) => Ok(m),
            other => Err(kind_error(ModelKind::Lm, other.kind())),
        }
    }
}

pub(crate) fn kind_error(expected: ModelKind, found: ModelKind) -> Error {
    Error::KindMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Copies every value from `src` into `dst` by name, requiring both sets to
/// hold exactly the same names and shapes.
pub(crate) fn load_values(dst: &mut ParamSet, src: &[(String, Tensor)]) -> Result<()> {
    if src.len() != dst.len() {
        return Err(Error::Config(format!(
            "parameter count mismatch: model has {}, source has {}",
            dst.len(),
            src.len()
        )));
    }
    for (name, value) in src {
        dst.set_value(name, value.clone())?;
    }
    Ok(())
}

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Affine, Encoder, Predictor};
use super::{history, EncodedUtterance, LossNodes, ModelConfig, ModelKind, PredState, StepModel, TransducerModel};
use crate::data::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::lattice::LatticeLogProbs;
use crate::numerics::{Eval, Graph, ParamSet, Tensor};

/// `z_{t,u} = W_o relu(f_t + g_u) + b`, softmax over `{blank} ∪ V`.
#[derive(Clone, Debug)]
pub struct StandardTransducer {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamSet,
    encoder: Encoder,
    predictor: Predictor,
    joint: Affine,
}

impl StandardTransducer {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let s = config.init_scale;
        let j = config.joint_dim;
        let encoder = Encoder::register(&mut params, &config.encoder, j, s, &mut rng)?;
        let predictor = Predictor::register(&mut params, "pred", vocab.len(), &config.predictor, j, s, &mut rng)?;
        let joint = Affine::register(&mut params, "joint", j, vocab.len(), s, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            predictor,
            joint,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// `f_t` for every frame.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Eval::new(&self.params);
        let f = self.encoder.forward(&mut g, features)?;
        Ok((*f).clone())
    }

    /// `g_u` for `u = 0..=U`.
    pub fn predict(&self, tokens: &[usize]) -> Result<Tensor> {
        self.vocab.check_labels(tokens)?;
        let mut g = Eval::new(&self.params);
        let p = self.predictor.forward(&mut g, &history(&self.vocab, tokens))?;
        Ok((*p).clone())
    }

    fn joint_nodes<G: Graph>(&self, g: &mut G, f: &G::Node, p: &G::Node) -> Result<G::Node> {
        let sum = g.outer_add(f, p)?;
        let h = g.relu(&sum);
        let z = self.joint.apply(g, &h)?;
        Ok(g.log_softmax(&z))
    }

    /// Lattice from precomputed `f [T x h]` and `g [(U+1) x h]`.
    pub fn joint_standard(&self, f: &Tensor, p: &Tensor, targets: &[usize]) -> Result<LatticeLogProbs> {
        if p.rows() != targets.len() + 1 {
            return Err(Error::dim("joint_standard", format!("{} predictor rows for U={}", p.rows(), targets.len())));
        }
        let mut g = Eval::new(&self.params);
        let (fnode, pnode) = (g.constant(f.clone()), g.constant(p.clone()));
        let lp = self.joint_nodes(&mut g, &fnode, &pnode)?;
        let shape = vec![f.rows(), targets.len() + 1, self.vocab.len()];
        LatticeLogProbs::new((*lp).clone().reshape(shape)?, targets.to_vec())
    }
}

impl TransducerModel for StandardTransducer {
    fn kind(&self) -> ModelKind {
        ModelKind::Standard
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn lattice_log_probs<G: Graph>(&self, g: &mut G, features: &Tensor, tokens: &[usize]) -> Result<G::Node> {
        self.vocab.check_labels(tokens)?;
        let f = self.encoder.forward(g, features)?;
        let p = self.predictor.forward(g, &history(&self.vocab, tokens))?;
        self.joint_nodes(g, &f, &p)
    }

    fn loss<G: Graph>(&self, g: &mut G, utt: &Utterance, _lambda: f64) -> Result<LossNodes<G::Node>> {
        let lp = self.lattice_log_probs(g, &utt.features, &utt.tokens)?;
        let jt = g.transducer_loss(&lp, utt.features.rows(), &utt.tokens)?;
        Ok(LossNodes {
            total: jt.clone(),
            transducer: jt,
            lm_nll: None,
            lambda: 0.0,
        })
    }
}

impl StepModel for StandardTransducer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn encode_utterance(&self, g: &mut Eval, features: &Tensor) -> Result<EncodedUtterance> {
        Ok(EncodedUtterance {
            enc: self.encoder.forward(g, features)?,
            acoustic_vocab: None,
        })
    }

    fn initial_state(&self, g: &mut Eval) -> Result<PredState> {
        let h0 = self.predictor.zero_state(g);
        let (h, out) = self.predictor.step(g, self.vocab.bos(), &h0)?;
        Ok(PredState {
            hidden: vec![h],
            out: vec![out],
        })
    }

    fn advance(&self, g: &mut Eval, state: &PredState, token: usize) -> Result<PredState> {
        let (h, out) = self.predictor.step(g, token, &state.hidden[0])?;
        Ok(PredState {
            hidden: vec![h],
            out: vec![out],
        })
    }

    fn joint_row(&self, g: &mut Eval, enc: &EncodedUtterance, t: usize, state: &PredState) -> Result<Vec<f64>> {
        let f = g.slice_rows(&enc.enc, t, 1)?;
        let lp: Arc<Tensor> = self.joint_nodes(g, &f, &state.out[0])?;
        Ok(lp.data().to_vec())
    }
}

impl StandardTransducer {
    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocab, values: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, vocab)?;
        super::load_values(&mut m.params, values)?;
        Ok(m)
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Affine, Encoder, LmBranch, Predictor, LM_PREFIX};
use super::lm::{HasLm, LanguageModel, LmConfig};
use super::{history, lm_targets, EncodedUtterance, LossNodes, ModelConfig, ModelKind, PredState, StepModel, TransducerModel};
use crate::data::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::lattice::LatticeLogProbs;
use crate::numerics::{Eval, Graph, ParamSet, Tensor};

/// Transducer with separate blank and vocabulary predictors.
///
/// ```text
/// z^b_{t,u} = W_o^b relu(f_t + g^b_u)                 (one logit)
/// z^v_t     = W_enc^v relu(f_t)                        (V logits)
/// z^v_u     = log_softmax(W_pred^v relu(g^v_u))        (V log-probs, no acoustics)
/// P(. | t, u) = softmax([z^b_{t,u}; z^v_t + z^v_u])
/// ```
#[derive(Clone, Debug)]
pub struct FactorizedTransducer {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamSet,
    encoder: Encoder,
    blank_pred: Predictor,
    blank_out: Affine,
    enc_vocab: Affine,
    lm: LmBranch,
}

impl FactorizedTransducer {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let s = config.init_scale;
        let j = config.joint_dim;
        let v = vocab.output_size();
        let encoder = Encoder::register(&mut params, &config.encoder, j, s, &mut rng)?;
        let blank_pred = Predictor::register(&mut params, "blank_pred", vocab.len(), &config.predictor, j, s, &mut rng)?;
        let blank_out = Affine::register(&mut params, "blank_out", j, 1, s, &mut rng)?;
        let enc_vocab = Affine::register(&mut params, "enc_vocab", j, v, s, &mut rng)?;
        let lm = LmBranch::register(&mut params, vocab.len(), &config.predictor, j, s, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            blank_pred,
            blank_out,
            enc_vocab,
            lm,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocab, values: &[(String, Tensor)]) -> Result<Self> {
        let mut m = Self::new(config, vocab)?;
        super::load_values(&mut m.params, values)?;
        Ok(m)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn enc_vocab(&self) -> &Affine {
        &self.enc_vocab
    }

    /// True for parameters of the vocabulary predictor (`predictor^v`, its
    /// embedding and `W_pred^v`); everything else is the frozen set during adaptation.
    pub fn is_vocab_predictor_param(name: &str) -> bool {
        name.strip_prefix(LM_PREFIX).is_some_and(|rest| rest.starts_with('.'))
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            predictor: self.config.predictor.clone(),
            proj_dim: self.config.joint_dim,
            init_scale: self.config.init_scale,
            seed: self.config.seed,
        }
    }

    /// The vocabulary predictor as a standalone language model.
    pub fn vocab_predictor(&self) -> Result<LanguageModel> {
        let values: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(_, p)| Self::is_vocab_predictor_param(&p.name))
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        LanguageModel::from_parts(self.lm_config(), self.vocab.clone(), &values)
    }

    /// Replaces the vocabulary predictor with `lm`; encoder and blank branch are untouched.
    pub fn swap_vocab_predictor(&mut self, lm: &LanguageModel) -> Result<()> {
        if lm.vocab() != &self.vocab {
            return Err(Error::VocabMismatch(format!(
                "model has {} ids, language model has {}",
                self.vocab.len(),
                lm.vocab().len()
            )));
        }
        for (_, p) in lm.params().iter() {
            let own = self
                .params
                .by_name(&p.name)
                .ok_or_else(|| Error::VocabMismatch(format!("unknown LM parameter {}", p.name)))?;
            if own.value.shape() != p.value.shape() {
                return Err(Error::VocabMismatch(format!(
                    "{}: {:?} vs {:?}",
                    p.name,
                    own.value.shape(),
                    p.value.shape()
                )));
            }
        }
        for (_, p) in lm.params().iter() {
            self.params.set_value(&p.name, p.value.clone())?;
        }
        Ok(())
    }

    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Eval::new(&self.params);
        Ok((*self.encoder.forward(&mut g, features)?).clone())
    }

    /// `g^b_u` for `u = 0..=U`.
    pub fn predict_blank(&self, tokens: &[usize]) -> Result<Tensor> {
        self.vocab.check_labels(tokens)?;
        let mut g = Eval::new(&self.params);
        Ok((*self.blank_pred.forward(&mut g, &history(&self.vocab, tokens))?).clone())
    }

    /// `z^v_u` rows for `u = 0..=U`.
    pub fn vocab_log_probs(&self, tokens: &[usize]) -> Result<Tensor> {
        self.vocab.check_labels(tokens)?;
        let mut g = Eval::new(&self.params);
        Ok((*self.lm.forward(&mut g, &history(&self.vocab, tokens))?).clone())
    }

    fn blank_logits_nodes<G: Graph>(&self, g: &mut G, f: &G::Node, gb: &G::Node) -> Result<G::Node> {
        let sum = g.outer_add(f, gb)?;
        let h = g.relu(&sum);
        self.blank_out.apply(g, &h)
    }

    fn acoustic_vocab_nodes<G: Graph>(&self, g: &mut G, f: &G::Node) -> Result<G::Node> {
        let r = g.relu(f);
        self.enc_vocab.apply(g, &r)
    }

    fn joint_nodes<G: Graph>(
        &self,
        g: &mut G,
        f: &G::Node,
        gb: &G::Node,
        zvu: &G::Node,
    ) -> Result<G::Node> {
        let zb = self.blank_logits_nodes(g, f, gb)?;
        let zvt = self.acoustic_vocab_nodes(g, f)?;
        let zv = g.outer_add(&zvt, zvu)?;
        let z = g.concat_cols(&zb, &zv)?;
        Ok(g.log_softmax(&z))
    }

    /// Blank logits `z^b` laid out `[T*(U+1) x 1]`.
    pub fn blank_logits(&self, features: &Tensor, tokens: &[usize]) -> Result<Tensor> {
        self.vocab.check_labels(tokens)?;
        let mut g = Eval::new(&self.params);
        let f = self.encoder.forward(&mut g, features)?;
        let gb = self.blank_pred.forward(&mut g, &history(&self.vocab, tokens))?;
        Ok((*self.blank_logits_nodes(&mut g, &f, &gb)?).clone())
    }

    /// Lattice from precomputed `f`, `g^b` and `z^v_u`.
    pub fn joint_factorized(&self, f: &Tensor, gb: &Tensor, zvu: &Tensor, targets: &[usize]) -> Result<LatticeLogProbs> {
        let u1 = targets.len() + 1;
        if gb.rows() != u1 || zvu.rows() != u1 {
            return Err(Error::dim(
                "joint_factorized",
                format!("{} blank rows and {} vocab rows for U={}", gb.rows(), zvu.rows(), targets.len()),
            ));
        }
        let mut g = Eval::new(&self.params);
        let (fnode, gbn, zvn) = (g.constant(f.clone()), g.constant(gb.clone()), g.constant(zvu.clone()));
        let lp = self.joint_nodes(&mut g, &fnode, &gbn, &zvn)?;
        let shape = vec![f.rows(), u1, self.vocab.len()];
        LatticeLogProbs::new((*lp).clone().reshape(shape)?, targets.to_vec())
    }

    fn graph_parts<G: Graph>(&self, g: &mut G, features: &Tensor, tokens: &[usize]) -> Result<(G::Node, G::Node)> {
        self.vocab.check_labels(tokens)?;
        let hist = history(&self.vocab, tokens);
        let f = self.encoder.forward(g, features)?;
        let gb = self.blank_pred.forward(g, &hist)?;
        let zvu = self.lm.forward(g, &hist)?;
        let lp = self.joint_nodes(g, &f, &gb, &zvu)?;
        Ok((lp, zvu))
    }
}

impl HasLm for FactorizedTransducer {
    fn lm_vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn lm_params(&self) -> &ParamSet {
        &self.params
    }

    fn lm_branch(&self) -> &LmBranch {
        &self.lm
    }
}

impl TransducerModel for FactorizedTransducer {
    fn kind(&self) -> ModelKind {
        ModelKind::Factorized
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn lattice_log_probs<G: Graph>(&self, g: &mut G, features: &Tensor, tokens: &[usize]) -> Result<G::Node> {
        Ok(self.graph_parts(g, features, tokens)?.0)
    }

    fn loss<G: Graph>(&self, g: &mut G, utt: &Utterance, lambda: f64) -> Result<LossNodes<G::Node>> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let (lp, zvu) = self.graph_parts(g, &utt.features, &utt.tokens)?;
        let jt = g.transducer_loss(&lp, utt.features.rows(), &utt.tokens)?;
        let nll = g.pick_nll(&zvu, &lm_targets(&self.vocab, &utt.tokens))?;
        let weighted = g.scale(&nll, lambda)?;
        let total = g.add(&jt, &weighted)?;
        Ok(LossNodes {
            total,
            transducer: jt,
            lm_nll: Some(nll),
            lambda,
        })
    }
}

impl StepModel for FactorizedTransducer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn encode_utterance(&self, g: &mut Eval, features: &Tensor) -> Result<EncodedUtterance> {
        let enc = self.encoder.forward(g, features)?;
        let zvt = self.acoustic_vocab_nodes(g, &enc)?;
        Ok(EncodedUtterance {
            enc,
            acoustic_vocab: Some(zvt),
        })
    }

    fn initial_state(&self, g: &mut Eval) -> Result<PredState> {
        let hb0 = self.blank_pred.zero_state(g);
        let hv0 = self.lm.zero_state(g);
        let bos = self.vocab.bos();
        let (hb, gb) = self.blank_pred.step(g, bos, &hb0)?;
        let (hv, zv) = self.lm.step(g, bos, &hv0)?;
        Ok(PredState {
            hidden: vec![hb, hv],
            out: vec![gb, zv],
        })
    }

    fn advance(&self, g: &mut Eval, state: &PredState, token: usize) -> Result<PredState> {
        let (hb, gb) = self.blank_pred.step(g, token, &state.hidden[0])?;
        let (hv, zv) = self.lm.step(g, token, &state.hidden[1])?;
        Ok(PredState {
            hidden: vec![hb, hv],
            out: vec![gb, zv],
        })
    }

    fn joint_row(&self, g: &mut Eval, enc: &EncodedUtterance, t: usize, state: &PredState) -> Result<Vec<f64>> {
        let f = g.slice_rows(&enc.enc, t, 1)?;
        let zb = self.blank_logits_nodes(g, &f, &state.out[0])?;
        let zvt_all = enc
            .acoustic_vocab
            .as_ref()
            .ok_or_else(|| Error::Config("utterance was not encoded by a factorized model".into()))?;
        let zvt = g.slice_rows(zvt_all, t, 1)?;
        let zv = g.outer_add(&zvt, &state.out[1])?;
        let z = g.concat_cols(&zb, &zv)?;
        Ok(g.log_softmax(&z).data().to_vec())
    }
}

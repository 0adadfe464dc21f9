#![allow(dead_code)]

use std::sync::Arc;

use ftt::data::Vocab;
use ftt::error::Result;
use ftt::lattice::LatticeLogProbs;
use ftt::model::{EncodedUtterance, EncoderConfig, ModelConfig, PredState, PredictorConfig, StepModel};
use ftt::numerics::{Eval, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rows drawn as softmax of scaled Gaussian logits.
pub fn random_lattice(rng: &mut ChaCha8Rng, t: usize, targets: Vec<usize>, v: usize) -> LatticeLogProbs {
    let u1 = targets.len() + 1;
    let mut data = Vec::with_capacity(t * u1 * (v + 1));
    for _ in 0..t * u1 {
        let logits: Vec<f64> = (0..=v).map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); 2.0 * z }).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|l| l - lse));
    }
    LatticeLogProbs::new(Tensor::new(vec![t, u1, v + 1], data).unwrap(), targets).unwrap()
}

pub fn random_targets(rng: &mut ChaCha8Rng, u: usize, v: usize) -> Vec<usize> {
    (0..u).map(|_| rng.random_range(1..=v)).collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
    Tensor::matrix(t, d, (0..t * d).map(|_| StandardNormal.sample(&mut *rng)).collect()).unwrap()
}

/// Model dimensions small enough for finite differences.
pub fn tiny_config(input_dim: usize, hidden: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_dim,
            hidden_dim: hidden,
            layers: 2,
            causal: true,
        },
        predictor: PredictorConfig {
            embed_dim: hidden,
            hidden_dim: hidden,
        },
        joint_dim: hidden,
        init_scale: 0.5,
        seed,
    }
}

/// Content vocabulary giving `v` transducer outputs (`v >= 4`).
pub fn vocab_with_outputs(v: usize) -> Vocab {
    let vocab = Vocab::synthetic(v - 3);
    assert_eq!(vocab.output_size(), v);
    vocab
}

/// A model whose output rows come from a closure of `(frame, history)`.
/// History is carried in the state as a tensor of ids.
pub struct ScriptedModel<F> {
    pub vocab: Vocab,
    pub params: ParamSet,
    pub frames: usize,
    pub rows: F,
}

impl<F> ScriptedModel<F>
where
    F: Fn(usize, &[usize]) -> Vec<f64> + Sync,
{
    pub fn new(vocab: Vocab, frames: usize, rows: F) -> Self {
        Self {
            vocab,
            params: ParamSet::new(),
            frames,
            rows,
        }
    }
}

fn history_of(state: &PredState) -> Vec<usize> {
    state.out()[0].data()[1..].iter().map(|&x| x as usize).collect()
}

impl<F> StepModel for ScriptedModel<F>
where
    F: Fn(usize, &[usize]) -> Vec<f64> + Sync,
{
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn encode_utterance(&self, _g: &mut Eval, features: &Tensor) -> Result<EncodedUtterance> {
        Ok(EncodedUtterance::new(Arc::new(features.clone()), None))
    }

    fn initial_state(&self, _g: &mut Eval) -> Result<PredState> {
        let t = Arc::new(Tensor::vector(vec![-1.0]).unwrap());
        Ok(PredState::new(vec![t.clone()], vec![t]))
    }

    fn advance(&self, _g: &mut Eval, state: &PredState, token: usize) -> Result<PredState> {
        let mut d = state.out()[0].data().to_vec();
        d.push(token as f64);
        let t = Arc::new(Tensor::vector(d).unwrap());
        Ok(PredState::new(vec![t.clone()], vec![t]))
    }

    fn joint_row(&self, _g: &mut Eval, _enc: &EncodedUtterance, t: usize, state: &PredState) -> Result<Vec<f64>> {
        Ok((self.rows)(t, &history_of(state)))
    }
}

pub fn log_normalize(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

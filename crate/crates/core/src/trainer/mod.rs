//! Training from scratch, text-only adaptation of the vocabulary predictor,
//! and perplexity / error-rate evaluation.

mod metrics;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{spearman, MetricLog, MetricRecord};
pub use optim::Adam;

use crate::data::Utterance;
use crate::decode::{decode_corpus, edit_distance, wer, BeamConfig, EditCounts};
use crate::error::{Error, Result};
use crate::model::{FactorizedTransducer, HasLm, LanguageModel, LossBreakdown, StepModel, TransducerModel};
use crate::numerics::{Gradients, Graph, ParamSet, Tape};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_SWEEPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            lr: 1e-3,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("lr and grad_clip must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adaptation always freezes the encoder, the blank predictor and the
/// acoustic vocabulary projection; only `lm.*` is updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub sweeps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            sweeps: DEFAULT_SWEEPS,
            lr: 1e-4,
            batch_size: 8,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl AdaptConfig {
    fn as_loop(&self) -> LoopConfig {
        LoopConfig {
            lr: self.lr,
            passes: self.sweeps,
            batch_size: self.batch_size,
            seed: self.seed,
            grad_clip: self.grad_clip,
        }
    }
}

/// Held-out data evaluated after every epoch or sweep.
#[derive(Clone, Copy)]
pub struct EvalSet<'a> {
    pub text: Option<&'a [Vec<usize>]>,
    pub utterances: Option<&'a [Utterance]>,
    pub decode: BeamConfig<'a>,
}

impl Default for EvalSet<'_> {
    fn default() -> Self {
        Self {
            text: None,
            utterances: None,
            decode: BeamConfig {
                beam_size: 1,
                ..Default::default()
            },
        }
    }
}

struct LoopConfig {
    lr: f64,
    passes: usize,
    batch_size: usize,
    seed: u64,
    grad_clip: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct PassStats {
    total: f64,
    transducer: f64,
    lm_nll: f64,
    count: usize,
}

/// Mini-batch Adam over `samples`. Per-sample gradients run in parallel and
/// are summed in batch order, so results do not depend on thread count.
fn fit<M, S, P, Gf, Cb>(
    model: &mut M,
    samples: &[S],
    cfg: &LoopConfig,
    params_mut: P,
    trainable: impl Fn(&str) -> bool,
    sample_id: impl Fn(&S) -> String,
    grad: Gf,
    mut after_pass: Cb,
) -> Result<()>
where
    M: Sync,
    S: Sync,
    P: Fn(&mut M) -> &mut ParamSet,
    Gf: Fn(&M, &S) -> Result<(Gradients, LossBreakdown)> + Sync,
    Cb: FnMut(&M, usize, usize, PassStats) -> Result<()>,
{
    if samples.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut adam = Adam::new(params_mut(model), cfg.lr, trainable);
    let n_params = params_mut(model).len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0;
    for pass in 1..=cfg.passes {
        order.shuffle(&mut rng);
        let mut stats = PassStats::default();
        for batch in order.chunks(cfg.batch_size) {
            let model_ref: &M = model;
            let results: Vec<Result<(Gradients, LossBreakdown)>> =
                batch.par_iter().map(|&i| grad(model_ref, &samples[i])).collect();
            let mut sum = Gradients::empty(n_params);
            for (r, &i) in results.into_iter().zip(batch) {
                let nan = || Error::NanLoss {
                    step,
                    utt_id: sample_id(&samples[i]),
                };
                let (g, b) = r.map_err(|e| match e {
                    Error::NonFinite(_) => nan(),
                    e => e,
                })?;
                if !b.total.is_finite() || !g.is_finite() {
                    return Err(nan());
                }
                sum.add_assign(&g);
                stats.total += b.total;
                stats.transducer += b.transducer;
                stats.lm_nll += b.lm_nll;
                stats.count += 1;
            }
            let ps = params_mut(model);
            ps.zero_grad();
            ps.accumulate(&sum, 1.0 / batch.len() as f64);
            adam.step(ps, cfg.grad_clip);
            step += 1;
        }
        after_pass(model, pass, step, stats)?;
    }
    Ok(())
}

fn transducer_grad<M: TransducerModel>(model: &M, utt: &Utterance, lambda: f64) -> Result<(Gradients, LossBreakdown)> {
    let mut tape = Tape::new(model.params());
    let nodes = model.loss(&mut tape, utt, lambda)?;
    let b = nodes.breakdown(&tape);
    Ok((tape.backward(nodes.total)?, b))
}

fn lm_grad<L: HasLm>(model: &L, sentence: &[usize]) -> Result<(Gradients, LossBreakdown)> {
    let mut tape = Tape::new(model.lm_params());
    let nll = model.lm_nll_graph(&mut tape, sentence)?;
    let v = tape.value(&nll).item();
    let b = LossBreakdown {
        total: v,
        transducer: 0.0,
        lm_nll: v,
        lambda: 1.0,
    };
    Ok((tape.backward(nll)?, b))
}

fn evaluate<M: StepModel + HasLm>(model: &M, eval: &EvalSet, rec: &mut MetricRecord) -> Result<()> {
    if let Some(text) = eval.text {
        rec.ppl = Some(eval_ppl(model, text)?);
    }
    if let Some(utts) = eval.utterances {
        rec.wer = Some(eval_wer(model, utts, &eval.decode)?.wer);
    }
    Ok(())
}

/// Trains on transcribed utterances with the model's combined objective.
/// Logs mean loss terms per epoch.
pub fn train<M: TransducerModel>(model: &mut M, corpus: &[Utterance], cfg: &TrainConfig) -> Result<MetricLog> {
    cfg.validate()?;
    for u in corpus {
        model.vocab().check_labels(&u.tokens)?;
    }
    let mut log = MetricLog::new();
    let lambda = cfg.lambda;
    let loop_cfg = LoopConfig {
        lr: cfg.lr,
        passes: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        grad_clip: cfg.grad_clip,
    };
    fit(
        model,
        corpus,
        &loop_cfg,
        |m| m.params_mut(),
        |_| true,
        |u| u.utt_id.clone(),
        |m, u| transducer_grad(m, u, lambda),
        |_, pass, step, s| {
            let n = s.count as f64;
            log.push(MetricRecord {
                step,
                phase: "train".into(),
                pass,
                loss: Some(s.total / n),
                transducer: Some(s.transducer / n),
                lm_nll: Some(s.lm_nll / n),
                ..Default::default()
            })
        },
    )?;
    Ok(log)
}

/// Trains a standalone LM on text.
pub fn train_lm(lm: &mut LanguageModel, text: &[Vec<usize>], cfg: &TrainConfig, held_out: Option<&[Vec<usize>]>) -> Result<MetricLog> {
    cfg.validate()?;
    for s in text {
        lm.vocab().check_labels(s)?;
    }
    let mut log = MetricLog::new();
    let loop_cfg = LoopConfig {
        lr: cfg.lr,
        passes: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        grad_clip: cfg.grad_clip,
    };
    fit(
        lm,
        text,
        &loop_cfg,
        |m| m.params_mut(),
        |_| true,
        |s| format!("sentence {s:?}"),
        |m, s| lm_grad(m, s),
        |m, pass, step, s| {
            log.push(MetricRecord {
                step,
                phase: "train".into(),
                pass,
                loss: Some(s.total / s.count as f64),
                ppl: held_out.map(|h| eval_ppl(m, h)).transpose()?,
                ..Default::default()
            })
        },
    )?;
    Ok(log)
}

/// Fine-tunes only the vocabulary predictor on target-domain text. The log
/// holds a pass-0 record for the unadapted model, then one per sweep.
pub fn adapt_lm(
    model: &mut FactorizedTransducer,
    adapt_text: &[Vec<usize>],
    cfg: &AdaptConfig,
    eval: &EvalSet,
) -> Result<MetricLog> {
    adapt_lm_with(model, adapt_text, cfg, eval, |_, _| Ok(()))
}

/// [`adapt_lm`] with a hook called after every sweep.
pub fn adapt_lm_with(
    model: &mut FactorizedTransducer,
    adapt_text: &[Vec<usize>],
    cfg: &AdaptConfig,
    eval: &EvalSet,
    mut on_sweep: impl FnMut(&FactorizedTransducer, usize) -> Result<()>,
) -> Result<MetricLog> {
    if adapt_text.iter().all(Vec::is_empty) {
        return Err(Error::Empty("adaptation text"));
    }
    for s in adapt_text {
        model.vocab().check_labels(s)?;
    }
    let mut log = MetricLog::new();
    let mut rec = MetricRecord {
        phase: "adapt".into(),
        ..Default::default()
    };
    evaluate(model, eval, &mut rec)?;
    log.push(rec)?;
    fit(
        model,
        adapt_text,
        &cfg.as_loop(),
        |m| m.params_mut(),
        FactorizedTransducer::is_vocab_predictor_param,
        |s| format!("sentence {s:?}"),
        |m, s| lm_grad(m, s),
        |m, pass, step, s| {
            let mut rec = MetricRecord {
                step,
                phase: "adapt".into(),
                pass,
                loss: Some(s.total / s.count as f64),
                ..Default::default()
            };
            evaluate(m, eval, &mut rec)?;
            log.push(rec)?;
            on_sweep(m, pass)
        },
    )?;
    Ok(log)
}

/// `exp(total NLL / predicted tokens)`, counting the end-of-sequence token.
pub fn eval_ppl<L: HasLm + ?Sized>(model: &L, text: &[Vec<usize>]) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::Empty("perplexity corpus"));
    }
    let nlls: Vec<Result<f64>> = text.par_iter().map(|s| model.lm_nll(s)).collect();
    let mut total = 0.0;
    for r in nlls {
        total += r?;
    }
    let tokens: usize = text.iter().map(|s| s.len() + 1).sum();
    Ok((total / tokens as f64).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UttReport {
    pub utt_id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub edits: EditCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub wer: f64,
    pub utterances: Vec<UttReport>,
}

pub fn eval_wer<M: StepModel + ?Sized>(model: &M, utts: &[Utterance], cfg: &BeamConfig) -> Result<WerReport> {
    let hyps = decode_corpus(model, utts, cfg)?;
    let refs: Vec<Vec<usize>> = utts.iter().map(|u| u.tokens.clone()).collect();
    let hyp_tokens: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.tokens).collect();
    let wer = wer(&refs, &hyp_tokens)?;
    let utterances = utts
        .iter()
        .zip(refs)
        .zip(hyp_tokens)
        .map(|((u, r), h)| UttReport {
            utt_id: u.utt_id.clone(),
            edits: edit_distance(&r, &h),
            reference: r,
            hypothesis: h,
        })
        .collect();
    Ok(WerReport { wer, utterances })
}

/// Caps the global worker pool at `FT_THREADS` when set. Later calls are no-ops.
pub fn configure_threads() {
    if let Some(n) = std::env::var("FT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

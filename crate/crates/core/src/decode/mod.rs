//! Greedy and beam-search decoding with optional shallow fusion, plus error metrics.

mod metrics;

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{edit_distance, wer, EditCounts};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, LmState, PredState, StepModel};
use crate::numerics::{Eval, Tensor};

pub const DEFAULT_MAX_SYMBOLS: usize = 3;
pub const DEFAULT_FUSION_WEIGHT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// `am_score + fusion_weight * lm_score`.
    pub score: f64,
    pub am_score: f64,
    pub lm_score: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BeamConfig<'a> {
    pub beam_size: usize,
    pub max_symbols_per_frame: usize,
    pub fusion_weight: f64,
    pub fusion_lm: Option<&'a LanguageModel>,
}

impl Default for BeamConfig<'_> {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_symbols_per_frame: DEFAULT_MAX_SYMBOLS,
            fusion_weight: 0.0,
            fusion_lm: None,
        }
    }
}

impl BeamConfig<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_symbols_per_frame == 0 {
            return Err(Error::Config("beam_size and max_symbols_per_frame must be >= 1".into()));
        }
        if !(self.fusion_weight >= 0.0) {
            return Err(Error::Config("fusion weight must be >= 0".into()));
        }
        if self.fusion_weight > 0.0 && self.fusion_lm.is_none() {
            return Err(Error::MissingFusionLm(self.fusion_weight));
        }
        Ok(())
    }
}

/// First index of the maximum; blank (index 0) wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Frame-by-frame argmax decoding. A frame that hits the label cap is left
/// without scoring a blank.
pub fn greedy_decode<M: StepModel + ?Sized>(model: &M, features: &Tensor, max_symbols_per_frame: usize) -> Result<Hypothesis> {
    if max_symbols_per_frame == 0 {
        return Err(Error::Config("max_symbols_per_frame must be >= 1".into()));
    }
    let mut g = Eval::new(model.params());
    let enc = model.encode_utterance(&mut g, features)?;
    let mut state = model.initial_state(&mut g)?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for t in 0..enc.frames() {
        let mut emitted = 0;
        while emitted < max_symbols_per_frame {
            let row = model.joint_row(&mut g, &enc, t, &state)?;
            let k = argmax(&row);
            score += row[k];
            if k == 0 {
                break;
            }
            tokens.push(k);
            state = model.advance(&mut g, &state, k)?;
            emitted += 1;
        }
    }
    Ok(Hypothesis {
        tokens,
        score,
        am_score: score,
        lm_score: 0.0,
    })
}

#[derive(Clone)]
struct Partial {
    tokens: Vec<usize>,
    am: f64,
    lm: f64,
    score: f64,
    emitted: usize,
    state: Arc<PredState>,
    lm_state: Option<Arc<LmState>>,
}

enum Move {
    /// Leaves the frame, carrying its blank score (or none when capped).
    Close(usize, f64),
    Label(usize, usize, f64, f64),
}

/// Frame-synchronous beam search. Within a frame, each expansion round keeps
/// the `beam_size` best of all blank and label extensions of the active set;
/// label extensions stay active, blank ones close the frame. Closed
/// hypotheses with equal token sequences are merged by max. Returns the
/// final beam, best first.
pub fn beam_decode<M: StepModel + ?Sized>(model: &M, features: &Tensor, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let fusion = cfg.fusion_lm.filter(|_| cfg.fusion_weight > 0.0);
    if let Some(lm) = fusion {
        if lm.vocab() != model.vocab() {
            return Err(Error::VocabMismatch("fusion LM vocabulary differs from the model's".into()));
        }
    }
    let mut g = Eval::new(model.params());
    let mut lm_graph = fusion.map(|lm| Eval::new(lm.params()));
    let enc = model.encode_utterance(&mut g, features)?;
    let lm_state = match (fusion, lm_graph.as_mut()) {
        (Some(lm), Some(lg)) => Some(Arc::new(lm.start(lg)?)),
        _ => None,
    };
    let mut beam = vec![Partial {
        tokens: Vec::new(),
        am: 0.0,
        lm: 0.0,
        score: 0.0,
        emitted: 0,
        state: Arc::new(model.initial_state(&mut g)?),
        lm_state,
    }];
    for t in 0..enc.frames() {
        let mut closed: Vec<Partial> = Vec::new();
        let mut active: Vec<Partial> = beam.into_iter().map(|p| Partial { emitted: 0, ..p }).collect();
        while !active.is_empty() {
            let mut moves: Vec<(f64, Move)> = Vec::new();
            for (i, p) in active.iter().enumerate() {
                if p.emitted >= cfg.max_symbols_per_frame {
                    moves.push((p.score, Move::Close(i, 0.0)));
                    continue;
                }
                let row = model.joint_row(&mut g, &enc, t, &p.state)?;
                moves.push((p.score + row[0], Move::Close(i, row[0])));
                for (k, &am) in row.iter().enumerate().skip(1) {
                    let lm = p.lm_state.as_ref().map_or(0.0, |s| s.score(k));
                    moves.push((p.score + am + cfg.fusion_weight * lm, Move::Label(i, k, am, lm)));
                }
            }
            // Stable: ties keep blank first, then lower ids, then earlier hypotheses.
            moves.sort_by(|a, b| b.0.total_cmp(&a.0));
            moves.truncate(cfg.beam_size);
            let mut next = Vec::new();
            for (score, mv) in moves {
                match mv {
                    Move::Close(i, am) => {
                        let p = &active[i];
                        closed.push(Partial {
                            am: p.am + am,
                            score,
                            ..p.clone()
                        });
                    }
                    Move::Label(i, k, am, lm) => {
                        let p = &active[i];
                        let state = Arc::new(model.advance(&mut g, &p.state, k)?);
                        let lm_state = match (&p.lm_state, fusion, lm_graph.as_mut()) {
                            (Some(s), Some(lmm), Some(lg)) => Some(Arc::new(lmm.advance(lg, s, k)?)),
                            _ => None,
                        };
                        let mut tokens = p.tokens.clone();
                        tokens.push(k);
                        next.push(Partial {
                            tokens,
                            am: p.am + am,
                            lm: p.lm + lm,
                            score,
                            emitted: p.emitted + 1,
                            state,
                            lm_state,
                        });
                    }
                }
            }
            active = next;
        }
        beam = merge_best(closed, cfg.beam_size);
    }
    Ok(beam
        .into_iter()
        .map(|p| Hypothesis {
            tokens: p.tokens,
            score: p.score,
            am_score: p.am,
            lm_score: p.lm,
        })
        .collect())
}

/// Keeps the best-scoring hypothesis per token sequence, then the top `n`.
fn merge_best(hyps: Vec<Partial>, n: usize) -> Vec<Partial> {
    let mut slot: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut kept: Vec<Partial> = Vec::new();
    for h in hyps {
        match slot.get(&h.tokens) {
            Some(&i) => {
                if h.score > kept[i].score {
                    kept[i] = h;
                }
            }
            None => {
                slot.insert(h.tokens.clone(), kept.len());
                kept.push(h);
            }
        }
    }
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept.truncate(n);
    kept
}

/// Best hypothesis per utterance, decoded in parallel, in input order.
/// `beam_size == 1` without fusion runs the greedy decoder.
pub fn decode_corpus<M: StepModel + ?Sized>(model: &M, utts: &[Utterance], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    utts.par_iter()
        .map(|u| {
            if cfg.beam_size == 1 && cfg.fusion_weight == 0.0 {
                greedy_decode(model, &u.features, cfg.max_symbols_per_frame)
            } else {
                beam_decode(model, &u.features, cfg)?
                    .into_iter()
                    .next()
                    .ok_or(Error::Empty("beam search produced no hypothesis"))
            }
        })
        .collect()
}

#[derive(Serialize)]
struct HypothesisRecord<'a> {
    utt_id: &'a str,
    tokens: &'a [usize],
    score: f64,
    breakdown: Breakdown,
}

#[derive(Serialize)]
struct Breakdown {
    am: f64,
    lm: f64,
}

/// One JSON object per line: `{utt_id, tokens, score, breakdown}`.
pub fn write_hypotheses<W: Write>(mut out: W, utts: &[Utterance], hyps: &[Hypothesis]) -> Result<()> {
    for (u, h) in utts.iter().zip(hyps) {
        let rec = HypothesisRecord {
            utt_id: &u.utt_id,
            tokens: &h.tokens,
            score: h.score,
            breakdown: Breakdown {
                am: h.am_score,
                lm: h.lm_score,
            },
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<hypotheses>", e))?;
    }
    Ok(())
}

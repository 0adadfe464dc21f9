//! Exact transducer loss over the `T x (U+1)` alignment lattice.
//!
//! Grid convention: node `(t, u)` means "at frame `t`, `u` labels emitted".
//! A blank at `(t, u)` moves to `(t+1, u)`; label `y[u]` moves to `(t, u+1)`.
//! Every alignment ends with the blank emitted at `(T-1, U)`.

use crate::error::{Error, Result};
use crate::numerics::{log_add, Tensor};

/// Output index of the blank symbol.
pub const BLANK: usize = 0;

/// Largest `T + U` accepted by the enumeration oracle.
pub const MAX_ENUMERATION: usize = 12;

/// Per-`(t, u)` log-distributions over `{blank} ∪ 1..=V`.
#[derive(Clone, Debug)]
pub struct LatticeLogProbs {
    frames: usize,
    vocab: usize,
    logp: Tensor,
    targets: Vec<usize>,
}

impl LatticeLogProbs {
    /// `logp` has shape `[T, U+1, V+1]`; each row must exponentiate-sum to 1.
    pub fn new(logp: Tensor, targets: Vec<usize>) -> Result<Self> {
        let shape = logp.shape();
        if shape.len() != 3 {
            return Err(Error::Lattice(format!("expected [T, U+1, V+1], got {shape:?}")));
        }
        let (frames, u1, v1) = (shape[0], shape[1], shape[2]);
        if u1 != targets.len() + 1 {
            return Err(Error::Lattice(format!(
                "label axis {u1} does not match {} targets",
                targets.len()
            )));
        }
        if v1 < 2 {
            return Err(Error::Lattice("vocabulary must hold at least one token".into()));
        }
        let vocab = v1 - 1;
        if let Some(&bad) = targets.iter().find(|&&y| y == BLANK || y > vocab) {
            return Err(Error::InvalidToken {
                id: bad,
                lo: 1,
                hi: vocab,
            });
        }
        for (r, row) in logp.data().chunks_exact(v1).enumerate() {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            if !(s - 1.0).abs().le(&1e-9) {
                return Err(Error::Lattice(format!("row {r} sums to {s}")));
            }
        }
        Ok(Self {
            frames,
            vocab,
            logp,
            targets,
        })
    }

    /// Every row uniform over the `V+1` symbols.
    pub fn uniform(frames: usize, vocab: usize, targets: Vec<usize>) -> Result<Self> {
        let v1 = vocab + 1;
        let lp = -(v1 as f64).ln();
        let logp = Tensor::full(&[frames.max(1), targets.len() + 1, v1], lp);
        if frames == 0 {
            return Err(Error::Lattice("T must be at least 1".into()));
        }
        Self::new(logp, targets)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.targets.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.logp
    }

    #[inline]
    fn lp(&self, t: usize, u: usize, k: usize) -> f64 {
        let u1 = self.targets.len() + 1;
        let v1 = self.vocab + 1;
        self.logp.data()[(t * u1 + u) * v1 + k]
    }

    /// Log forward variables `[T, U+1]`; `alpha[0][0] = 0`.
    pub fn forward_alphas(&self) -> Tensor {
        let (t_max, u1) = (self.frames, self.targets.len() + 1);
        let mut a = vec![f64::NEG_INFINITY; t_max * u1];
        for t in 0..t_max {
            for u in 0..u1 {
                let v = if t == 0 && u == 0 {
                    0.0
                } else {
                    let from_blank = if t > 0 {
                        a[(t - 1) * u1 + u] + self.lp(t - 1, u, BLANK)
                    } else {
                        f64::NEG_INFINITY
                    };
                    let from_label = if u > 0 {
                        a[t * u1 + u - 1] + self.lp(t, u - 1, self.targets[u - 1])
                    } else {
                        f64::NEG_INFINITY
                    };
                    log_add(from_blank, from_label)
                };
                a[t * u1 + u] = v;
            }
        }
        Tensor::new(vec![t_max, u1], a).expect("lattice dims are positive")
    }

    /// Log backward variables `[T, U+1]`: probability of finishing from `(t, u)`,
    /// including the emission made at `(t, u)`.
    pub fn backward_betas(&self) -> Tensor {
        let (t_max, u_max) = (self.frames, self.targets.len());
        let u1 = u_max + 1;
        let mut b = vec![f64::NEG_INFINITY; t_max * u1];
        for t in (0..t_max).rev() {
            for u in (0..u1).rev() {
                let v = if t == t_max - 1 && u == u_max {
                    self.lp(t, u, BLANK)
                } else {
                    let via_blank = if t + 1 < t_max {
                        b[(t + 1) * u1 + u] + self.lp(t, u, BLANK)
                    } else {
                        f64::NEG_INFINITY
                    };
                    let via_label = if u < u_max {
                        b[t * u1 + u + 1] + self.lp(t, u, self.targets[u])
                    } else {
                        f64::NEG_INFINITY
                    };
                    log_add(via_blank, via_label)
                };
                b[t * u1 + u] = v;
            }
        }
        Tensor::new(vec![t_max, u1], b).expect("lattice dims are positive")
    }

    /// `-log P(y | x)` summed over every alignment.
    pub fn transducer_loss(&self) -> f64 {
        let alphas = self.forward_alphas();
        let u1 = self.targets.len() + 1;
        let t = self.frames - 1;
        let u = u1 - 1;
        -(alphas.data()[t * u1 + u] + self.lp(t, u, BLANK))
    }

    /// `d loss / d logp[t, u, k]`, shaped like the log-probabilities.
    pub fn transducer_loss_grad(&self) -> Tensor {
        self.loss_and_grad().1
    }

    pub fn loss_and_grad(&self) -> (f64, Tensor) {
        let alphas = self.forward_alphas();
        let betas = self.backward_betas();
        let (a, b) = (alphas.data(), betas.data());
        let (t_max, u_max) = (self.frames, self.targets.len());
        let (u1, v1) = (u_max + 1, self.vocab + 1);
        let log_total = b[0];
        let mut grad = vec![0.0; t_max * u1 * v1];
        for t in 0..t_max {
            for u in 0..u1 {
                let alpha = a[t * u1 + u];
                if alpha == f64::NEG_INFINITY {
                    continue;
                }
                let base = (t * u1 + u) * v1;
                let after_blank = if t + 1 < t_max {
                    b[(t + 1) * u1 + u]
                } else if u == u_max {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
                grad[base + BLANK] = -(alpha + self.lp(t, u, BLANK) + after_blank - log_total).exp();
                if u < u_max {
                    let y = self.targets[u];
                    grad[base + y] = -(alpha + self.lp(t, u, y) + b[t * u1 + u + 1] - log_total).exp();
                }
            }
        }
        let loss = -log_total;
        let g = Tensor::new(vec![t_max, u1, v1], grad).expect("lattice dims are positive");
        (loss, g)
    }

    /// Every alignment in the preimage of the targets under blank removal.
    pub fn enumerate_alignments(&self) -> Result<Vec<AlignmentPath>> {
        let (t_max, u_max) = (self.frames, self.targets.len());
        if t_max + u_max > MAX_ENUMERATION {
            return Err(Error::EnumerationTooLarge(t_max + u_max));
        }
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(t_max + u_max);
        self.extend_paths(&mut cur, 0, 0, &mut out);
        Ok(out)
    }

    fn extend_paths(&self, cur: &mut Vec<usize>, blanks: usize, labels: usize, out: &mut Vec<AlignmentPath>) {
        let (t_max, u_max) = (self.frames, self.targets.len());
        if blanks == t_max {
            if labels == u_max {
                out.push(AlignmentPath { tokens: cur.clone() });
            }
            return;
        }
        cur.push(BLANK);
        self.extend_paths(cur, blanks + 1, labels, out);
        cur.pop();
        if labels < u_max {
            cur.push(self.targets[labels]);
            self.extend_paths(cur, blanks, labels + 1, out);
            cur.pop();
        }
    }

    /// Log-probability of one alignment walked through the grid.
    pub fn path_log_prob(&self, path: &AlignmentPath) -> Result<f64> {
        let (mut t, mut u) = (0, 0);
        let mut lp = 0.0;
        for &sym in &path.tokens {
            if t >= self.frames {
                return Err(Error::Lattice("alignment runs past the last frame".into()));
            }
            if sym == BLANK {
                lp += self.lp(t, u, BLANK);
                t += 1;
            } else {
                if u >= self.targets.len() || self.targets[u] != sym {
                    return Err(Error::Lattice("alignment does not collapse to the targets".into()));
                }
                lp += self.lp(t, u, sym);
                u += 1;
            }
        }
        if t != self.frames || u != self.targets.len() {
            return Err(Error::Lattice("alignment does not end at (T, U)".into()));
        }
        Ok(lp)
    }

    /// Loss by explicit enumeration; only for `T + U <= 12`.
    pub fn brute_force_loss(&self) -> Result<f64> {
        let paths = self.enumerate_alignments()?;
        let mut total = f64::NEG_INFINITY;
        for p in &paths {
            total = log_add(total, self.path_log_prob(p)?);
        }
        Ok(-total)
    }
}

/// Symbol sequence over `{blank} ∪ vocabulary` of length `T + U`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub tokens: Vec<usize>,
}

impl AlignmentPath {
    pub fn blanks(&self) -> usize {
        self.tokens.iter().filter(|&&s| s == BLANK).count()
    }

    pub fn collapse(&self) -> Vec<usize> {
        collapse_alignment(&self.tokens)
    }
}

/// Removes every blank.
pub fn collapse_alignment(path: &[usize]) -> Vec<usize> {
    path.iter().copied().filter(|&s| s != BLANK).collect()
}

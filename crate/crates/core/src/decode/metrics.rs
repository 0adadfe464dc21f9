//! Edit distance and corpus-pooled error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.subs + self.ins + self.dels
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
/// Among minimal alignments, substitution beats deletion beats insertion.
pub fn edit_distance(reference: &[usize], hyp: &[usize]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut table = vec![vec![EditCounts::default(); m + 1]; n + 1];
    for i in 1..=n {
        table[i][0] = EditCounts { dels: i, ..Default::default() };
    }
    for j in 1..=m {
        table[0][j] = EditCounts { ins: j, ..Default::default() };
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = table[i - 1][j - 1];
            let sub = if reference[i - 1] == hyp[j - 1] {
                diag
            } else {
                EditCounts { subs: diag.subs + 1, ..diag }
            };
            let up = table[i - 1][j];
            let del = EditCounts { dels: up.dels + 1, ..up };
            let left = table[i][j - 1];
            let ins = EditCounts { ins: left.ins + 1, ..left };
            let mut best = sub;
            if del.total() < best.total() {
                best = del;
            }
            if ins.total() < best.total() {
                best = ins;
            }
            table[i][j] = best;
        }
    }
    table[n][m]
}

/// `100 * total edits / total reference tokens`, pooled over the corpus.
pub fn wer(refs: &[Vec<usize>], hyps: &[Vec<usize>]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::dim("wer", format!("{} references vs {} hypotheses", refs.len(), hyps.len())));
    }
    let words: usize = refs.iter().map(Vec::len).sum();
    if words == 0 {
        return Err(Error::Empty("wer needs at least one reference token"));
    }
    let errors: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h).total()).sum();
    Ok(100.0 * errors as f64 / words as f64)
}

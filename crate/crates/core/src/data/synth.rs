//! Seeded synthetic source/target domains.
//!
//! Text comes from a per-domain bigram model over the content tokens.
//! Audio renders each token as a few noisy copies of a fixed embedding that
//! is shared by every domain. Tokens come in confusable pairs whose
//! embeddings differ by `pair_separation`, so recognition leans on the LM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Utterance, Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    /// Number of content tokens.
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub dup_min: usize,
    pub dup_max: usize,
    pub noise_sigma: f64,
    pub domain_seed: u64,
    pub bigram_temperature: f64,
    /// Seed of the token embeddings; shared across domains.
    pub acoustic_seed: u64,
    /// Distance between the embeddings of the two members of a pair.
    pub pair_separation: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            vocab_size: 30,
            feature_dim: 16,
            dup_min: 2,
            dup_max: 4,
            noise_sigma: 0.3,
            domain_seed: 1,
            bigram_temperature: 1.0,
            acoustic_seed: 7,
            pair_separation: 0.6,
            min_len: 4,
            max_len: 10,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size < 3 {
            return bad("vocab_size must be >= 3");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1");
        }
        if self.dup_min == 0 || self.dup_min > self.dup_max {
            return bad("need 1 <= dup_min <= dup_max");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.bigram_temperature > 0.0) {
            return bad("bigram_temperature must be > 0");
        }
        if !(self.pair_separation >= 0.0) {
            return bad("pair_separation must be >= 0");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(self.vocab_size)
    }

    pub fn with_domain(&self, domain_seed: u64) -> Self {
        Self {
            domain_seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    /// Text-only adaptation data.
    Text,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
            Split::Text => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Text => "text",
        }
    }
}

/// Partner of content index `i` in its confusable pair, if any.
fn partner(i: usize, n: usize) -> Option<usize> {
    let p = i ^ 1;
    (p < n).then_some(p)
}

/// Start and transition distributions over content indices `0..vocab_size`.
/// Self-transitions and transitions into the pair partner have probability zero
/// so token boundaries stay audible.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramTable {
    pub start: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
}

impl BigramTable {
    pub fn from_spec(spec: &SyntheticTaskSpec) -> Self {
        let n = spec.vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.domain_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let temp = spec.bigram_temperature;
        let mut row = |mask: &dyn Fn(usize) -> bool| {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if mask(j) {
                        f64::NEG_INFINITY
                    } else {
                        z / temp
                    }
                })
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let start = row(&|_| false);
        let trans = (0..n)
            .map(|i| row(&|j| j == i || Some(j) == partner(i, n)))
            .collect();
        Self { start, trans }
    }

    /// Mean over rows of `KL(self[i] || other[i])`, start row included.
    pub fn mean_kl(&self, other: &BigramTable) -> f64 {
        fn kl(p: &[f64], q: &[f64]) -> f64 {
            p.iter()
                .zip(q)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (pi / qi).ln())
                .sum()
        }
        let mut total = kl(&self.start, &other.start);
        for (a, b) in self.trans.iter().zip(&other.trans) {
            total += kl(a, b);
        }
        total / (self.trans.len() + 1) as f64
    }

    fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if r < acc {
                return j;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Per-token embeddings, identical for every domain with the same acoustic seed.
pub fn token_embeddings(spec: &SyntheticTaskSpec) -> Vec<Vec<f64>> {
    let n = spec.vocab_size;
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.acoustic_seed.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut out = vec![Vec::new(); n];
    for p in 0..n.div_ceil(2) {
        let center: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let half = spec.pair_separation / 2.0;
        let a = 2 * p;
        out[a] = center.iter().zip(&dir).map(|(c, u)| c - half * u / norm).collect();
        if a + 1 < n {
            out[a + 1] = center.iter().zip(&dir).map(|(c, u)| c + half * u / norm).collect();
        }
    }
    out
}

/// Text plus rendered audio for one domain split.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainCorpus {
    pub sentences: Vec<Vec<usize>>,
    pub utterances: Vec<Utterance>,
}

/// Samples `n` sentences for `split` and renders their features.
pub fn gen_domain(spec: &SyntheticTaskSpec, n: usize, split: Split) -> Result<DomainCorpus> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("gen_domain needs n >= 1"));
    }
    let table = BigramTable::from_spec(spec);
    let emb = token_embeddings(spec);
    let seed = spec
        .domain_seed
        .wrapping_mul(0x2545_F491_4F6C_DD1D)
        .wrapping_add(split.code());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n);
    let mut utterances = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut idx = Vec::with_capacity(len);
        let mut cur = BigramTable::sample_row(&table.start, &mut rng);
        idx.push(cur);
        while idx.len() < len {
            cur = BigramTable::sample_row(&table.trans[cur], &mut rng);
            idx.push(cur);
        }
        let mut frames = Vec::new();
        for &k in &idx {
            let dup = rng.random_range(spec.dup_min..=spec.dup_max);
            for _ in 0..dup {
                for &e in &emb[k] {
                    let noise: f64 = if spec.noise_sigma > 0.0 {
                        StandardNormal.sample(&mut rng)
                    } else {
                        0.0
                    };
                    frames.push(e + spec.noise_sigma * noise);
                }
            }
        }
        let t = frames.len() / spec.feature_dim;
        let tokens: Vec<usize> = idx.iter().map(|&k| k + RESERVED).collect();
        utterances.push(Utterance {
            utt_id: format!("{}-d{}-{i:05}", split.name(), spec.domain_seed),
            features: Tensor::matrix(t, spec.feature_dim, frames)?,
            tokens: tokens.clone(),
        });
        sentences.push(tokens);
    }
    Ok(DomainCorpus {
        sentences,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_single_frame_render_is_exact() {
        let spec = SyntheticTaskSpec {
            noise_sigma: 0.0,
            dup_min: 1,
            dup_max: 1,
            ..Default::default()
        };
        let emb = token_embeddings(&spec);
        let c = gen_domain(&spec, 5, Split::Train).unwrap();
        for u in &c.utterances {
            assert_eq!(u.features.rows(), u.tokens.len());
            for (r, &tok) in u.tokens.iter().enumerate() {
                assert_eq!(u.features.row(r), emb[tok - RESERVED].as_slice());
            }
        }
    }

    #[test]
    fn generation_is_pure() {
        let spec = SyntheticTaskSpec::default();
        let a = gen_domain(&spec, 20, Split::Dev).unwrap();
        let b = gen_domain(&spec, 20, Split::Dev).unwrap();
        assert_eq!(a, b);
        let c = gen_domain(&spec, 20, Split::Test).unwrap();
        assert_ne!(a.sentences, c.sentences);
    }

    #[test]
    fn default_domains_differ_in_bigram_statistics() {
        let src = SyntheticTaskSpec::default();
        let tgt = src.with_domain(2);
        let kl = BigramTable::from_spec(&src).mean_kl(&BigramTable::from_spec(&tgt));
        assert!(kl > 0.5, "KL {kl}");
    }

    #[test]
    fn no_reserved_ids_or_forbidden_transitions() {
        let spec = SyntheticTaskSpec::default();
        let c = gen_domain(&spec, 200, Split::Train).unwrap();
        for s in &c.sentences {
            assert!(s.iter().all(|&t| t >= RESERVED && t < RESERVED + spec.vocab_size));
            assert!(s.len() >= spec.min_len && s.len() <= spec.max_len);
            for w in s.windows(2) {
                let (a, b) = (w[0] - RESERVED, w[1] - RESERVED);
                assert_ne!(a, b);
                assert_ne!(Some(b), partner(a, spec.vocab_size));
            }
        }
    }

    #[test]
    fn embeddings_shared_across_domains() {
        let src = SyntheticTaskSpec::default();
        assert_eq!(token_embeddings(&src), token_embeddings(&src.with_domain(99)));
        let e = token_embeddings(&src);
        let d: f64 = e[0].iter().zip(&e[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((d - src.pair_separation).abs() < 1e-12);
    }
}

use rand::Rng;

use super::{EncoderConfig, PredictorConfig};
use crate::error::{Error, Result};
use crate::numerics::{Graph, GruCell, ParamId, ParamSet, Tensor};

fn lookup(ps: &ParamSet, name: &str) -> Result<ParamId> {
    ps.id(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

/// Affine map with weight `[out x in]` and bias `[out]`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn register<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        output: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: ps.add_uniform(format!("{prefix}.w"), &[output, input], scale, rng)?,
            b: ps.add_uniform(format!("{prefix}.b"), &[output], scale, rng)?,
        })
    }

    pub fn attach(ps: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: lookup(ps, &format!("{prefix}.w"))?,
            b: lookup(ps, &format!("{prefix}.b"))?,
        })
    }

    pub fn apply<G: Graph>(&self, g: &mut G, x: &G::Node) -> Result<G::Node> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, &w, Some(&b))
    }
}

/// Stack of causal recurrent layers followed by an output projection.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    cells: Vec<GruCell>,
    out: Affine,
}

impl Encoder {
    pub fn register<R: Rng>(
        ps: &mut ParamSet,
        config: &EncoderConfig,
        out_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut cells = Vec::with_capacity(config.layers);
        let mut input = config.input_dim;
        for l in 0..config.layers {
            cells.push(GruCell::register(ps, &format!("encoder.l{l}"), input, config.hidden_dim, scale, rng)?);
            input = config.hidden_dim;
        }
        let out = Affine::register(ps, "encoder.out", config.hidden_dim, out_dim, scale, rng)?;
        Ok(Self {
            config: config.clone(),
            cells,
            out,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.cells.iter().flat_map(|c| c.param_ids()).collect();
        ids.extend([self.out.w, self.out.b]);
        ids
    }

    /// `f_t` for every frame: `[T x out_dim]`. Row `t` depends on frames `0..=t` only.
    pub fn forward<G: Graph>(&self, g: &mut G, features: &Tensor) -> Result<G::Node> {
        if features.shape().len() != 2 || features.cols() != self.config.input_dim {
            return Err(Error::dim(
                "encode",
                format!("features {:?}, expected [T x {}]", features.shape(), self.config.input_dim),
            ));
        }
        let mut h = g.constant(features.clone());
        for cell in &self.cells {
            h = cell.run(g, &h)?;
        }
        self.out.apply(g, &h)
    }
}

/// Embedding, one recurrent layer and a projection; consumes `<s> y_1 .. y_u`.
#[derive(Clone, Debug)]
pub struct Predictor {
    embed: ParamId,
    cell: GruCell,
    out: Affine,
}

impl Predictor {
    pub fn register<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        vocab_len: usize,
        config: &PredictorConfig,
        out_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let embed = ps.add_uniform(format!("{prefix}.embed"), &[vocab_len, config.embed_dim], scale, rng)?;
        let cell = GruCell::register(ps, &format!("{prefix}.cell"), config.embed_dim, config.hidden_dim, scale, rng)?;
        let out = Affine::register(ps, &format!("{prefix}.proj"), config.hidden_dim, out_dim, scale, rng)?;
        Ok(Self { embed, cell, out })
    }

    pub fn attach(ps: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            embed: lookup(ps, &format!("{prefix}.embed"))?,
            cell: GruCell::attach(ps, &format!("{prefix}.cell"))?,
            out: Affine::attach(ps, &format!("{prefix}.proj"))?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.cell.param_ids());
        ids.extend([self.out.w, self.out.b]);
        ids
    }

    /// Outputs `[len(history) x out_dim]`; row `u` has seen `history[..=u]`.
    pub fn forward<G: Graph>(&self, g: &mut G, history: &[usize]) -> Result<G::Node> {
        let table = g.param(self.embed);
        let emb = g.gather_rows(&table, history)?;
        let h = self.cell.run(g, &emb)?;
        self.out.apply(g, &h)
    }

    /// Feeds one token; returns `(hidden, output)`.
    pub fn step<G: Graph>(&self, g: &mut G, token: usize, hidden: &G::Node) -> Result<(G::Node, G::Node)> {
        let table = g.param(self.embed);
        let emb = g.gather_rows(&table, &[token])?;
        let h = self.cell.step(g, &emb, hidden)?;
        let out = self.out.apply(g, &h)?;
        Ok((h, out))
    }

    pub fn zero_state<G: Graph>(&self, g: &mut G) -> G::Node {
        self.cell.zero_state(g)
    }
}

/// Label-only network ending in a log-softmax over the `V` non-blank classes.
#[derive(Clone, Debug)]
pub struct LmBranch {
    pred: Predictor,
    head: Affine,
}

pub const LM_PREFIX: &str = "lm";

impl LmBranch {
    pub fn register<R: Rng>(
        ps: &mut ParamSet,
        vocab_len: usize,
        config: &PredictorConfig,
        proj_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let pred = Predictor::register(ps, LM_PREFIX, vocab_len, config, proj_dim, scale, rng)?;
        let head = Affine::register(ps, &format!("{LM_PREFIX}.head"), proj_dim, vocab_len - 1, scale, rng)?;
        Ok(Self { pred, head })
    }

    pub fn attach(ps: &ParamSet) -> Result<Self> {
        Ok(Self {
            pred: Predictor::attach(ps, LM_PREFIX)?,
            head: Affine::attach(ps, &format!("{LM_PREFIX}.head"))?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.pred.param_ids();
        ids.extend([self.head.w, self.head.b]);
        ids
    }

    pub fn head(&self) -> &Affine {
        &self.head
    }

    fn head_log_probs<G: Graph>(&self, g: &mut G, out: &G::Node) -> Result<G::Node> {
        let r = g.relu(out);
        let logits = self.head.apply(g, &r)?;
        Ok(g.log_softmax(&logits))
    }

    /// Next-token log-distributions `[len(history) x V]`.
    pub fn forward<G: Graph>(&self, g: &mut G, history: &[usize]) -> Result<G::Node> {
        let out = self.pred.forward(g, history)?;
        self.head_log_probs(g, &out)
    }

    pub fn step<G: Graph>(&self, g: &mut G, token: usize, hidden: &G::Node) -> Result<(G::Node, G::Node)> {
        let (h, out) = self.pred.step(g, token, hidden)?;
        let lp = self.head_log_probs(g, &out)?;
        Ok((h, lp))
    }

    pub fn zero_state<G: Graph>(&self, g: &mut G) -> G::Node {
        self.pred.zero_state(g)
    }
}

use rand::Rng;

use super::{Graph, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Single-gate recurrent cell: an update gate and a tanh candidate.
///
/// ```text
/// z  = sigmoid(W_xz x + W_hz h + b_z)
/// c  = tanh(W_xc x + W_hc h + b_c)
/// h' = h + z * (c - h)
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_xz: ParamId,
    w_hz: ParamId,
    b_z: ParamId,
    w_xc: ParamId,
    w_hc: ParamId,
    b_c: ParamId,
}

impl GruCell {
    pub fn register<R: Rng>(
        ps: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!("{prefix}: cell dims must be positive")));
        }
        let (i, h) = (input_dim, hidden_dim);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_xz: ps.add_uniform(format!("{prefix}.w_xz"), &[h, i], init_scale, rng)?,
            w_hz: ps.add_uniform(format!("{prefix}.w_hz"), &[h, h], init_scale, rng)?,
            b_z: ps.add_uniform(format!("{prefix}.b_z"), &[h], init_scale, rng)?,
            w_xc: ps.add_uniform(format!("{prefix}.w_xc"), &[h, i], init_scale, rng)?,
            w_hc: ps.add_uniform(format!("{prefix}.w_hc"), &[h, h], init_scale, rng)?,
            b_c: ps.add_uniform(format!("{prefix}.b_c"), &[h], init_scale, rng)?,
        })
    }

    /// Re-attaches a cell to parameters already present in `ps` (used on load).
    pub fn attach(ps: &ParamSet, prefix: &str) -> Result<Self> {
        let id = |s: &str| {
            ps.id(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{s}")))
        };
        let w_xz = id("w_xz")?;
        let shape = ps.get(w_xz).value.shape().to_vec();
        Ok(Self {
            input_dim: shape[1],
            hidden_dim: shape[0],
            w_xz,
            w_hz: id("w_hz")?,
            b_z: id("b_z")?,
            w_xc: id("w_xc")?,
            w_hc: id("w_hc")?,
            b_c: id("b_c")?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w_xz, self.w_hz, self.b_z, self.w_xc, self.w_hc, self.b_c]
    }

    pub fn zero_state<G: Graph>(&self, g: &mut G) -> G::Node {
        g.constant(Tensor::zeros(&[1, self.hidden_dim]))
    }

    /// One recurrent step on a `[1 x input_dim]` input.
    pub fn step<G: Graph>(&self, g: &mut G, x: &G::Node, h: &G::Node) -> Result<G::Node> {
        let (wz, bz, wc, bc) = (g.param(self.w_xz), g.param(self.b_z), g.param(self.w_xc), g.param(self.b_c));
        let xz = g.linear(x, &wz, Some(&bz))?;
        let xc = g.linear(x, &wc, Some(&bc))?;
        self.step_projected(g, &xz, &xc, h)
    }

    fn step_projected<G: Graph>(&self, g: &mut G, xz: &G::Node, xc: &G::Node, h: &G::Node) -> Result<G::Node> {
        let (whz, whc) = (g.param(self.w_hz), g.param(self.w_hc));
        let hz = g.linear(h, &whz, None)?;
        let pre_z = g.add(xz, &hz)?;
        let z = g.sigmoid(&pre_z);
        let hc = g.linear(h, &whc, None)?;
        let pre_c = g.add(xc, &hc)?;
        let c = g.tanh(&pre_c);
        let delta = g.sub(&c, h)?;
        let upd = g.mul(&z, &delta)?;
        g.add(h, &upd)
    }

    /// Runs the cell over every row of `xs` from the zero state; returns `[T x hidden]`.
    pub fn run<G: Graph>(&self, g: &mut G, xs: &G::Node) -> Result<G::Node> {
        let steps = g.value(xs).rows();
        let (wz, bz, wc, bc) = (g.param(self.w_xz), g.param(self.b_z), g.param(self.w_xc), g.param(self.b_c));
        let xz_all = g.linear(xs, &wz, Some(&bz))?;
        let xc_all = g.linear(xs, &wc, Some(&bc))?;
        let mut h = self.zero_state(g);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xz = g.slice_rows(&xz_all, t, 1)?;
            let xc = g.slice_rows(&xc_all, t, 1)?;
            h = self.step_projected(g, &xz, &xc, &h)?;
            outs.push(h.clone());
        }
        g.stack_rows(&outs)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{Eval, Tape};

    fn cell(scale: f64) -> (ParamSet, GruCell) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = GruCell::register(&mut ps, "c", 3, 4, scale, &mut rng).unwrap();
        (ps, c)
    }

    #[test]
    fn zero_weights_zero_state_stays_zero() {
        let (mut ps, c) = cell(0.1);
        for (_, p) in ps.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Eval::new(&ps);
        let x = g.constant(Tensor::matrix(1, 3, vec![5.0, -2.0, 1.0]).unwrap());
        let h0 = c.zero_state(&mut g);
        let h1 = c.step(&mut g, &x, &h0).unwrap();
        assert!(h1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_is_deterministic_and_matches_run() {
        let (ps, c) = cell(0.5);
        let xs = Tensor::matrix(3, 3, vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5, 0.0, 0.3, 0.9]).unwrap();
        let mut g = Eval::new(&ps);
        let xn = g.constant(xs.clone());
        let all = c.run(&mut g, &xn).unwrap();
        let mut h = c.zero_state(&mut g);
        for t in 0..3 {
            let x = g.constant(xs.slice_rows(t, 1).unwrap());
            let h_again = c.step(&mut g, &x, &h).unwrap();
            let h_next = c.step(&mut g, &x, &h).unwrap();
            assert_eq!(h_again, h_next);
            assert_eq!(h_next.data(), all.row(t));
            h = h_next;
        }
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let (ps, c) = cell(0.1);
        let mut g = Eval::new(&ps);
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let bad = g.constant(Tensor::zeros(&[1, 5]));
        assert!(c.step(&mut g, &x, &bad).is_err());
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let (mut ps, c) = cell(0.5);
        let xs = Tensor::matrix(4, 3, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect()).unwrap();
        let loss_of = |ps: &ParamSet| {
            let mut g = Eval::new(ps);
            let xn = g.constant(xs.clone());
            let out = c.run(&mut g, &xn).unwrap();
            out.sum()
        };
        let mut tape = Tape::new(&ps);
        let xn = tape.constant(xs.clone());
        let out = c.run(&mut tape, &xn).unwrap();
        let loss = tape.sum(&out);
        let grads = tape.backward(loss).unwrap();
        drop(tape);

        for id in c.param_ids() {
            let analytic = grads.dense(id, &ps);
            for j in 0..analytic.numel() {
                let eps = 1e-5;
                let orig = ps.get(id).value.data()[j];
                ps.get_mut(id).value.data_mut()[j] = orig + eps;
                let up = loss_of(&ps);
                ps.get_mut(id).value.data_mut()[j] = orig - eps;
                let dn = loss_of(&ps);
                ps.get_mut(id).value.data_mut()[j] = orig;
                let fd = (up - dn) / (2.0 * eps);
                let a = analytic.data()[j];
                let rel = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-8));
                assert!(rel < 1e-4 || (a - fd).abs() < 1e-9, "param {} [{j}]: {a} vs {fd}", ps.get(id).name);
            }
        }
    }
}

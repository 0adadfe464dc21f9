mod common;

use std::time::Instant;

use common::{random_lattice, random_targets, rng};
use ftt::lattice::LatticeLogProbs;
use ftt::numerics::{log_add, Graph, ParamSet, Tape, Tensor};
use rand::Rng;

/// Sum over alignments by direct recursion on the grid, written independently
/// of the library's DP and enumerator.
fn recursive_log_likelihood(lat: &LatticeLogProbs) -> f64 {
    let (t_max, u_max, v1) = (lat.frames(), lat.labels(), lat.vocab() + 1);
    let d = lat.log_probs().data();
    let at = |t: usize, u: usize, k: usize| d[(t * (u_max + 1) + u) * v1 + k];
    fn go(t: usize, u: usize, t_max: usize, u_max: usize, y: &[usize], at: &dyn Fn(usize, usize, usize) -> f64) -> f64 {
        if t == t_max - 1 && u == u_max {
            return at(t, u, 0);
        }
        let mut acc = f64::NEG_INFINITY;
        if t + 1 < t_max {
            acc = log_add(acc, at(t, u, 0) + go(t + 1, u, t_max, u_max, y, at));
        }
        if u < u_max {
            acc = log_add(acc, at(t, u, y[u]) + go(t, u + 1, t_max, u_max, y, at));
        }
        acc
    }
    go(0, 0, t_max, u_max, lat.targets(), &at)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

#[test]
fn dp_matches_enumeration_on_random_lattices() {
    let start = Instant::now();
    let mut r = rng(11);
    for _ in 0..100 {
        let t = r.random_range(1..=4);
        let u = r.random_range(0..=3);
        let v = r.random_range(1..=3);
        let targets = random_targets(&mut r, u, v);
        let lat = random_lattice(&mut r, t, targets, v);
        let dp = lat.transducer_loss();
        let brute = lat.brute_force_loss().unwrap();
        let rec = -recursive_log_likelihood(&lat);
        assert!((dp - brute).abs() < 1e-9, "dp {dp} brute {brute}");
        assert!((dp - rec).abs() < 1e-9, "dp {dp} recursion {rec}");
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn uniform_rows_match_closed_form() {
    for t in 1..=5 {
        for u in 0..=4 {
            for v in [1, 2, 5] {
                let targets = vec![1; u];
                let lat = LatticeLogProbs::uniform(t, v, targets).unwrap();
                let expected = -ln_binomial(t - 1 + u, u) + (t + u) as f64 * ((v + 1) as f64).ln();
                assert!((lat.transducer_loss() - expected).abs() < 1e-9, "T={t} U={u} V={v}");
            }
        }
    }
}

#[test]
fn path_count_is_binomial() {
    for t in 1..=5 {
        for u in 0..=4 {
            let lat = LatticeLogProbs::uniform(t, 2, vec![2; u]).unwrap();
            let n = lat.enumerate_alignments().unwrap().len() as f64;
            assert!((n.ln() - ln_binomial(t - 1 + u, u)).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_occupancy_totals_t_plus_u() {
    let mut r = rng(5);
    for _ in 0..30 {
        let (t, u, v) = (r.random_range(1..=6), r.random_range(0..=5), r.random_range(1..=4));
        let targets = random_targets(&mut r, u, v);
        let lat = random_lattice(&mut r, t, targets, v);
        let g = lat.transducer_loss_grad();
        let occ: f64 = -g.data().iter().sum::<f64>();
        assert!((occ - (t + u) as f64).abs() < 1e-9, "occupancy {occ}");
        assert!(g.data().iter().all(|&x| x <= 0.0));
    }
}

/// Central differences through a log-softmax over raw logits, so the perturbed
/// rows stay normalized.
#[test]
fn lattice_gradient_matches_finite_differences() {
    let eps = 1e-5;
    let mut r = rng(21);
    for case in 0..10 {
        let (t, u, v) = (r.random_range(1..=4), r.random_range(0..=3), r.random_range(1..=3));
        let targets = random_targets(&mut r, u, v);
        let rows = t * (u + 1);
        let logits: Vec<f64> = (0..rows * (v + 1)).map(|_| r.random_range(-2.0..2.0)).collect();
        let loss_at = |x: &[f64]| {
            let lp: Vec<f64> = x.chunks(v + 1).flat_map(common::log_normalize).collect();
            LatticeLogProbs::new(Tensor::new(vec![t, u + 1, v + 1], lp).unwrap(), targets.clone())
                .unwrap()
                .transducer_loss()
        };
        let mut ps = ParamSet::new();
        let id = ps.add("logits", Tensor::matrix(rows, v + 1, logits.clone()).unwrap()).unwrap();
        let mut tape = Tape::new(&ps);
        let x = tape.param(id);
        let lp = tape.log_softmax(&x);
        let loss = tape.transducer_loss(&lp, t, &targets).unwrap();
        assert!((tape.value(&loss).item() - loss_at(&logits)).abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.dense(id, &ps);
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += eps;
            let mut dn = logits.clone();
            dn[i] -= eps;
            let numeric = (loss_at(&up) - loss_at(&dn)) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-5, "case {case} entry {i}: analytic {a} numeric {numeric}");
        }
    }
}

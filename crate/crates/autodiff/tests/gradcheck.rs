//! Analytic gradients against central finite differences.

use molsyn_autodiff::rng::{randn, stream};
use molsyn_autodiff::{Graph, Result, Tensor, Var};
use rand::Rng;

const H: f64 = 1e-5;

/// Relative error with an absolute floor so near-zero gradients compare sanely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks every entry of every input against a central difference of `f`.
fn check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let loss = f(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |ts: &[Tensor]| {
        let mut g = Graph::inference();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

#[test]
fn two_layer_mlps_match_finite_differences() {
    let mut rng = stream(2024, "mlp-gradcheck");
    for case in 0..50 {
        let batch = rng.random_range(1..4);
        let d_in = rng.random_range(2..6);
        let hidden = rng.random_range(2..7);
        let classes = rng.random_range(2..5);
        let x = randn(&mut rng, &[batch, d_in], 1.0);
        let w1 = randn(&mut rng, &[hidden, d_in], 0.7);
        let b1 = randn(&mut rng, &[hidden], 0.1);
        let w2 = randn(&mut rng, &[classes, hidden], 0.7);
        let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let use_gelu = case % 2 == 0;
        let err = check(&[x, w1, b1, w2], |g, v| {
            let h = g.matmul_nt(v[0], v[1])?;
            let h = g.add_row(h, v[2])?;
            let h = if use_gelu { g.gelu(h)? } else { g.tanh(h)? };
            let logits = g.matmul_nt(h, v[3])?;
            g.cross_entropy(logits, &targets, &vec![true; batch])
        });
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn attention_block_ops_match_finite_differences() {
    let mut rng = stream(7, "attn-gradcheck");
    for case in 0..10 {
        let t = rng.random_range(1..5);
        let d = 4;
        let x = randn(&mut rng, &[t, d], 1.0);
        let gain = randn(&mut rng, &[d], 1.0);
        let wq = randn(&mut rng, &[d, d], 0.5);
        let wk = randn(&mut rng, &[d, d], 0.5);
        let wv = randn(&mut rng, &[d, d], 0.5);
        let emb = randn(&mut rng, &[6, d], 1.0);
        let ids: Vec<usize> = (0..t).map(|_| rng.random_range(0..6)).collect();
        let err = check(&[x, gain, wq, wk, wv, emb], |g, v| {
            let e = g.gather(v[5], &ids)?;
            let x = g.add(v[0], e)?;
            let h = g.rms_norm(x, v[1], 1e-6)?;
            let q = g.matmul_nt(h, v[2])?;
            let k = g.matmul_nt(h, v[3])?;
            let val = g.matmul_nt(h, v[4])?;
            let q0 = g.slice_cols(q, 0, 2)?;
            let k0 = g.slice_cols(k, 0, 2)?;
            let s = g.matmul_nt(q0, k0)?;
            let s = g.scale(s, 0.5)?;
            let p = g.causal_softmax(s)?;
            let o = g.matmul(p, val)?;
            let rest = g.slice_cols(val, 2, 2)?;
            let cat = g.concat_cols(&[o, rest])?;
            let pooled = g.mean_rows(cat)?;
            let tr = g.transpose(pooled)?;
            let sm = g.softmax(tr, 0)?;
            let r = g.relu(sm)?;
            let w = g.mul(r, r)?;
            let l = g.sub(w, r)?;
            g.sum(l)
        });
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = stream(11, "matmul-oracle");
    let a = randn(&mut rng, &[4, 5], 1.0);
    let b = randn(&mut rng, &[5, 3], 1.0);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let c = g.matmul(va, vb).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..5 {
                s += a.get2(i, k) * b.get2(k, j);
            }
            assert!((g.value(c).get2(i, j) - s).abs() < 1e-12);
        }
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(xs.clone()).unwrap()).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let y = g.constant(Tensor::vector(shifted).unwrap()).unwrap();
            let sx = g.softmax(x, 0).unwrap();
            let sy = g.softmax(y, 0).unwrap();
            let total: f64 = g.value(sx).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(g.value(sx).data().iter().all(|p| *p >= 0.0 && *p <= 1.0));
            prop_assert!(g.value(sx).max_abs_diff(g.value(sy)) < 1e-9);
        }
    }
}

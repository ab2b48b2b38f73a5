use std::sync::Arc;

use lincoln_core::diffcore::{grad_check, DiffError, ParamStore, SparseMatrix, Tape, Tensor, Var};
use lincoln_core::inter::{gru_cell, register_gru_params, GruVars};
use lincoln_core::intra::{encode_snapshot, register_encoder_params, EncoderConfig, PreparedSnapshot, TimeScale};
use lincoln_core::synth::toy_instance;
use lincoln_core::trainer::{toy_config, toy_gradient_check};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.5f64..1.5, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn store_of(pairs: &[(&str, &Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in pairs {
        s.register(n, (*t).clone()).unwrap();
    }
    s
}

/// Reduces any output to a scalar with fixed, non-uniform weights so that
/// every output entry contributes a distinct amount.
fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var, DiffError> {
    let (r, c) = tape.value(v).dims2();
    let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.1 * (i % 7) as f64).collect();
    let w = tape.constant(Tensor::new(vec![r, c], w).unwrap())?;
    let prod = tape.mul(v, w)?;
    let flat = tape.transpose(prod)?;
    let ones = tape.constant(Tensor::filled(&[r, 1], 1.0))?;
    let per_col = tape.matmul(flat, ones)?;
    let row = tape.transpose(per_col)?;
    let mean = tape.row_mean(row)?;
    tape.scale(mean, c as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_and_hcat_gradients(a in matrix(3, 2), b in matrix(2, 4), c in matrix(3, 3)) {
        let store = store_of(&[("a", &a), ("b", &b), ("c", &c)]);
        let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
            let (a, b, c) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "c")?);
            let ab = t.matmul(a, b)?;
            let cat = t.hcat(ab, c)?;
            weighted_sum(t, cat)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn smooth_activation_gradients(a in matrix(3, 3)) {
        let store = store_of(&[("a", &a)]);
        let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
            let a = t.param(s, "a")?;
            let x = t.sigmoid(a)?;
            let y = t.tanh(a)?;
            let z = t.mul(x, y)?;
            let l = t.ln(x)?;
            let sum = t.add(z, l)?;
            weighted_sum(t, sum)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn row_cosine_gradients(a in matrix(4, 3), b in matrix(4, 3)) {
        prop_assume!((0..4).all(|i| a.row(i).iter().map(|x| x * x).sum::<f64>() > 0.05));
        prop_assume!((0..4).all(|i| b.row(i).iter().map(|x| x * x).sum::<f64>() > 0.05));
        let store = store_of(&[("a", &a), ("b", &b)]);
        let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
            let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
            let c = t.row_cosine(a, b)?;
            weighted_sum(t, c)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn sparse_and_broadcast_gradients(x in matrix(4, 2), b in matrix(1, 2)) {
        let s = Arc::new(SparseMatrix::new(3, 4, vec![(0, 0, 0.5), (0, 3, -1.0), (1, 1, 2.0), (2, 2, 0.25), (2, 0, 1.0)]).unwrap());
        let store = store_of(&[("x", &x), ("b", &b)]);
        let r = grad_check(&store, EPS, |t: &mut Tape, st: &ParamStore| {
            let (x, b) = (t.param(st, "x")?, t.param(st, "b")?);
            let y = t.spmm(&s, x)?;
            let bb = t.broadcast_row(b, 3)?;
            let z = t.add(y, bb)?;
            let v = t.vcat(z, b)?;
            weighted_sum(t, v)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn periodic_embedding_gradients(omega in matrix(1, 3), phi in matrix(1, 3), t0 in -2.0f64..2.0) {
        let store = store_of(&[("omega", &omega), ("phi", &phi)]);
        let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
            let (w, p) = (t.param(s, "omega")?, t.param(s, "phi")?);
            let a = t.cos_affine(w, p, t0)?;
            weighted_sum(t, a)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }
}

#[test]
fn gru_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    register_gru_params(&mut store, 3, &[0], &mut rng).unwrap();
    store
        .register("x", Tensor::from_rows(&[&[0.2, -0.4, 0.9], &[1.1, 0.3, -0.7]]))
        .unwrap();
    store
        .register("h", Tensor::from_rows(&[&[-0.5, 0.1, 0.6], &[0.0, 0.8, -0.2]]))
        .unwrap();
    let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
        let cell = GruVars::bind(t, s, "gru0").map_err(|e| match e {
            lincoln_core::inter::InterError::Diff(d) => d,
            other => panic!("{other}"),
        })?;
        let (x, h) = (t.param(s, "x")?, t.param(s, "h")?);
        let h1 = gru_cell(t, x, h, &cell).unwrap();
        let h2 = gru_cell(t, x, h1, &cell).unwrap();
        weighted_sum(t, h2)
    })
    .unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn encoder_gradients_on_toy() {
    let graph = toy_instance();
    let scale = TimeScale::for_dataset(&graph);
    let prep = PreparedSnapshot::new(&graph.snapshots()[0], &scale).unwrap();
    let cfg = EncoderConfig::new(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    register_encoder_params(&mut store, &cfg, &mut rng).unwrap();
    store.register_uniform("x", &[prep.num_nodes, 4], 1, &mut rng).unwrap();
    let r = grad_check(&store, EPS, |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let stack = encode_snapshot(t, s, &cfg, &prep, x, &[]).map_err(|e| match e {
            lincoln_core::intra::IntraError::Diff(d) => d,
            other => panic!("{other}"),
        })?;
        weighted_sum(t, stack.p[2])
    })
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
    assert!(r.entries_checked > 100);
}

#[test]
fn full_loss_gradients_on_toy() {
    let r = toy_gradient_check(&toy_config(), EPS, false).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let r = toy_gradient_check(&toy_config(), EPS, true).unwrap();
    assert!(r.max_rel_error > 1e-4);
}

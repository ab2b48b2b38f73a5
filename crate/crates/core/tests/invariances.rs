use std::sync::Arc;

use lincoln_core::diffcore::{ParamStore, Tape, Tensor};
use lincoln_core::hypercore::NodeId;
use lincoln_core::intra::{
    e2n_aggregate, encode_snapshot, gcn_propagate, n2e_aggregate, periodic_time_values, register_encoder_params,
    st_aggregate, Activation, EncoderConfig, PreparedSnapshot, TimeScale,
};
use lincoln_core::synth::toy_instance;
use lincoln_core::trainer::{candidate_pooling, predict_candidate, predict_scores};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn prediction_ignores_member_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (n, d) = (20, 6);
    let p = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let known = vec![true; n];
    let base: Vec<NodeId> = (0..7).map(|_| NodeId(rng.gen_range(0..n as u32))).collect();
    let reference = predict_candidate(&p, &known, &base, &w, 0.3).unwrap();

    let mut tape = Tape::new();
    let pv = tape.constant(p.clone()).unwrap();
    let wv = tape.constant(Tensor::column_vector(w.clone())).unwrap();
    let bv = tape.constant(Tensor::from_rows(&[&[0.3]])).unwrap();
    let (pool, _) = candidate_pooling(std::slice::from_ref(&base), &known, n).unwrap();
    let tape_ref = predict_scores(&mut tape, &pool, pv, wv, bv).unwrap();
    let tape_ref = tape.value(tape_ref).item().unwrap();

    let mut perm = base.clone();
    for _ in 0..100 {
        perm.shuffle(&mut rng);
        assert_eq!(predict_candidate(&p, &known, &perm, &w, 0.3).unwrap(), reference);
        let (pool, _) = candidate_pooling(&[perm.clone()], &known, n).unwrap();
        let y = predict_scores(&mut tape, &pool, pv, wv, bv).unwrap();
        assert_eq!(tape.value(y).item().unwrap(), tape_ref);
    }
}

#[test]
fn time_embedding_is_periodic() {
    let omega = [
        std::f64::consts::PI / 2.0,
        std::f64::consts::PI,
        2.0 * std::f64::consts::PI / 3.0,
    ];
    let phi = [0.1, -0.4, 0.0];
    // common period of all three frequencies
    let period = 12.0;
    for k in 0..20 {
        let t = k as f64 * 0.37;
        let a = periodic_time_values(t, t + 1.0, &omega, &phi, 6).unwrap();
        for m in 1..4 {
            let shift = m as f64 * period;
            let b = periodic_time_values(t + shift, t + 1.0 + shift, &omega, &phi, 6).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn disabling_time_injection_is_an_exact_identity() {
    let graph = toy_instance();
    let scale = TimeScale::for_dataset(&graph);
    let prep = PreparedSnapshot::new(&graph.snapshots()[0], &scale).unwrap();
    let mut cfg = EncoderConfig::new(4, 1);
    cfg.disable_pin = true;
    let mut store = ParamStore::new();
    register_encoder_params(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let x = Tensor::new(
        vec![prep.num_nodes, 4],
        (0..prep.num_nodes * 4).map(|i| i as f64 / 7.0 - 1.0).collect(),
    )
    .unwrap();

    let mut tape = Tape::new();
    let p = tape.constant(x).unwrap();
    let stack = encode_snapshot(&mut tape, &store, &cfg, &prep, p, &[]).unwrap();

    // the same layer composed by hand, feeding P directly to aggregation
    let g = |t: &mut Tape, n: &str| t.param(&store, &format!("layer1.{n}")).unwrap();
    let act = Activation::Relu;
    let (w, b) = (g(&mut tape, "n2e.w"), g(&mut tape, "n2e.b"));
    let q = n2e_aggregate(&mut tape, &prep.n2e, p, w, b, act).unwrap();
    let ws = g(&mut tape, "gcn_s.w");
    let wt = g(&mut tape, "gcn_t.w");
    let qs = gcn_propagate(&mut tape, q, &prep.adj_structural, ws, act).unwrap();
    let qt = gcn_propagate(&mut tape, q, &prep.adj_temporal, wt, act).unwrap();
    let (w, b) = (g(&mut tape, "st.w"), g(&mut tape, "st.b"));
    let q2 = st_aggregate(&mut tape, qs, qt, w, b, act).unwrap();
    let (w, b) = (g(&mut tape, "e2n.w"), g(&mut tape, "e2n.b"));
    let out = e2n_aggregate(&mut tape, &Arc::clone(&prep.e2n), q2, w, b, act).unwrap();

    assert_eq!(stack.snap, None);
    assert_eq!(tape.value(stack.q[0]), tape.value(q));
    assert_eq!(tape.value(stack.p[1]), tape.value(out));
}

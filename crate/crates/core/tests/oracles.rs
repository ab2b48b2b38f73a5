//! Independent straight-line reimplementations compared against the
//! tape-based code.

use lincoln_core::diffcore::{ParamStore, Tape, Tensor};
use lincoln_core::inter::{gru_cell, GruVars};
use lincoln_core::intra::{encode_snapshot, register_encoder_params, EncoderConfig, PreparedSnapshot, TimeScale};
use lincoln_core::synth::toy_instance;
use lincoln_core::trainer::{auroc, average_precision};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn dense(t: &Tensor) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn add_row(a: &M, b: &[f64]) -> M {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn relu(a: &M) -> M {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn param(store: &ParamStore, name: &str) -> M {
    dense(store.get(name).unwrap())
}

fn row(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().to_vec()
}

/// `D^-1/2 (A + I) D^-1/2` from a dense weighted adjacency.
fn normalize(a: &M) -> M {
    let n = a.len();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + a[i].iter().sum::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = if i == j { 1.0 } else { a[i][j] };
                    w / (deg[i].sqrt() * deg[j].sqrt())
                })
                .collect()
        })
        .collect()
}

#[test]
fn encoder_matches_dense_composition() {
    let graph = toy_instance();
    let snap = &graph.snapshots()[0];
    let scale = TimeScale::for_dataset(&graph);
    let cfg = EncoderConfig::new(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    register_encoder_params(&mut store, &cfg, &mut rng).unwrap();
    let n = snap.num_nodes();
    let x: Vec<f64> = (0..n * 4).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
    let x = Tensor::new(vec![n, 4], x).unwrap();

    let prep = PreparedSnapshot::new(snap, &scale).unwrap();
    let mut tape = Tape::new();
    let p_in = tape.constant(x.clone()).unwrap();
    let stack = encode_snapshot(&mut tape, &store, &cfg, &prep, p_in, &[]).unwrap();

    // incidence, degrees and proximity weights built by hand
    let edges: Vec<Vec<usize>> = snap
        .edges()
        .iter()
        .map(|e| e.nodes().iter().map(|v| snap.local_index(*v).unwrap()).collect())
        .collect();
    let times: Vec<f64> = snap.edges().iter().map(|e| e.timestamp() as f64).collect();
    let m = edges.len();
    let mut n2e = vec![vec![0.0; n]; m];
    let mut e2n = vec![vec![0.0; m]; n];
    let deg_v: Vec<usize> = (0..n)
        .map(|v| edges.iter().filter(|e| e.contains(&v)).count())
        .collect();
    for (j, e) in edges.iter().enumerate() {
        for &v in e {
            n2e[j][v] = 1.0 / e.len() as f64;
            e2n[v][j] = 1.0 / deg_v[v] as f64;
        }
    }
    let tau = snap.spec().duration() as f64;
    let mut a_s = vec![vec![0.0; m]; m];
    let mut a_t = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let common = edges[i].iter().filter(|v| edges[j].contains(v)).count();
            if i != j && common > 0 {
                let union = edges[i].len() + edges[j].len() - common;
                a_s[i][j] = common as f64 / union as f64;
                a_t[i][j] = (-(times[i] - times[j]).abs() / tau).exp();
            }
        }
    }
    let (a_s, a_t) = (normalize(&a_s), normalize(&a_t));

    let omega = row(&store, "time.omega");
    let phi = row(&store, "time.phi");
    let ts = scale.apply(snap.spec().t_start);
    let te = scale.apply(snap.spec().t_end);
    let snap_vec: Vec<f64> = omega
        .iter()
        .zip(&phi)
        .map(|(w, p)| (w * ts + p).cos())
        .chain(omega.iter().zip(&phi).map(|(w, p)| (w * te + p).cos()))
        .collect();
    let snap_m = vec![snap_vec];

    let mut p = dense(&x);
    for l in 1..=2 {
        let pre = format!("layer{l}");
        let g = |s: &str| param(&store, &format!("{pre}.{s}"));
        let b = |s: &str| row(&store, &format!("{pre}.{s}"));
        let query = add_row(&mm(&p, &g("att.w_q")), &b("att.b_q"));
        let key = add_row(&mm(&snap_m, &g("att.w_k")), &b("att.b_k"))[0].clone();
        let value = add_row(&mm(&snap_m, &g("att.w_v")), &b("att.b_v"))[0].clone();
        let p_att: M = p
            .iter()
            .zip(&query)
            .map(|(pr, qr)| {
                let s: f64 = qr.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>() / 2.0;
                let gate = sigmoid(s);
                pr.iter().zip(&value).map(|(a, v)| a + gate * v).collect()
            })
            .collect();
        let q = relu(&add_row(&mm(&mm(&n2e, &p_att), &g("n2e.w")), &b("n2e.b")));
        let qs = relu(&mm(&mm(&a_s, &q), &g("gcn_s.w")));
        let qt = relu(&mm(&mm(&a_t, &q), &g("gcn_t.w")));
        let cat: M = qs
            .iter()
            .zip(&qt)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        let q2 = relu(&add_row(&mm(&cat, &g("st.w")), &b("st.b")));
        p = relu(&add_row(&mm(&mm(&e2n, &q2), &g("e2n.w")), &b("e2n.b")));
    }
    let got = dense(tape.value(stack.p[2]));
    let mut nonzero = 0;
    for (gr, pr) in got.iter().zip(&p) {
        for (a, b) in gr.iter().zip(pr) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            nonzero += usize::from(*b != 0.0);
        }
    }
    assert!(nonzero > 0, "oracle output is all zero; test is vacuous");
}

#[test]
fn gru_scalar_hand_evaluation() {
    let (x, h) = (0.5, -0.3);
    let names = [
        ("w_z", 0.4),
        ("u_z", -0.2),
        ("b_z", 0.1),
        ("w_r", 0.7),
        ("u_r", 0.3),
        ("b_r", -0.5),
        ("w_h", -0.6),
        ("u_h", 0.9),
        ("b_h", 0.2),
    ];
    let mut store = ParamStore::new();
    for (n, v) in names {
        store.register(&format!("g.{n}"), Tensor::from_rows(&[&[v]])).unwrap();
    }
    let z = sigmoid(0.4 * x - 0.2 * h + 0.1);
    let r = sigmoid(0.7 * x + 0.3 * h - 0.5);
    let cand = (-0.6 * x + 0.9 * (r * h) + 0.2f64).tanh();
    let expected = (1.0 - z) * h + z * cand;

    let mut tape = Tape::new();
    let cell = GruVars::bind(&mut tape, &store, "g").unwrap();
    let xv = tape.constant(Tensor::from_rows(&[&[x]])).unwrap();
    let hv = tape.constant(Tensor::from_rows(&[&[h]])).unwrap();
    let out = gru_cell(&mut tape, xv, hv, &cell).unwrap();
    assert!((tape.value(out).item().unwrap() - expected).abs() < 1e-15);
}

#[test]
fn gru_saturated_update_gate_keeps_state() {
    let mut store = ParamStore::new();
    for g in ["z", "r", "h"] {
        store
            .register(&format!("g.w_{g}"), Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]))
            .unwrap();
        store
            .register(&format!("g.u_{g}"), Tensor::from_rows(&[&[0.5, 0.0], &[0.0, 0.5]]))
            .unwrap();
        let b = if g == "z" { -1e3 } else { 0.0 };
        store
            .register(&format!("g.b_{g}"), Tensor::from_rows(&[&[b, b]]))
            .unwrap();
    }
    let mut tape = Tape::new();
    let cell = GruVars::bind(&mut tape, &store, "g").unwrap();
    let h = Tensor::from_rows(&[&[0.25, -0.75]]);
    let xv = tape.constant(Tensor::from_rows(&[&[3.0, -2.0]])).unwrap();
    let hv = tape.constant(h.clone()).unwrap();
    let out = gru_cell(&mut tape, xv, hv, &cell).unwrap();
    assert_eq!(tape.value(out), &h);
}

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn enumerated_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // descending score, earlier input first on ties
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            let hits = order[..=rank].iter().filter(|&&k| labels[k] == 1).count();
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / positives
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=64).prop_flat_map(|n| {
        (
            // coarse grid so ties are common
            prop::collection::vec((0u8..12).prop_map(|v| f64::from(v) / 11.0), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auroc_matches_pairwise_count((scores, mut labels) in batch()) {
        labels[0] = 1;
        labels[1] = 0;
        let got = auroc(&scores, &labels).unwrap();
        prop_assert!((got - brute_auroc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn ap_matches_enumeration((scores, mut labels) in batch()) {
        labels[0] = 1;
        let got = average_precision(&scores, &labels).unwrap();
        prop_assert!((got - enumerated_ap(&scores, &labels)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn monotone_transform_preserves_metrics((scores, mut labels) in batch()) {
        labels[0] = 1;
        labels[1] = 0;
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&mapped, &labels).unwrap());
        prop_assert_eq!(
            average_precision(&scores, &labels).unwrap(),
            average_precision(&mapped, &labels).unwrap()
        );
    }
}

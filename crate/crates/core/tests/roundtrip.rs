use std::io::Cursor;

use lincoln_core::diffcore::{read_checkpoint, write_checkpoint};
use lincoln_core::hypercore::{
    parse_simplex_dataset, partition_into_snapshots, DynamicHypergraph, Hyperedge, NodeId, PartitionPolicy,
};
use lincoln_core::inter::HiddenStates;
use lincoln_core::synth::toy_instance;
use lincoln_core::trainer::{live_update, toy_config, TrainConfig};
use proptest::prelude::*;

fn edges() -> impl Strategy<Value = Vec<(Vec<u32>, i64)>> {
    prop::collection::vec((prop::collection::vec(0u32..15, 1..5), 0i64..100), 1..30)
}

proptest! {
    #[test]
    fn dataset_json_round_trip(raw in edges(), t in 1usize..4, by_count in any::<bool>()) {
        let edges: Vec<Hyperedge> = raw
            .iter()
            .map(|(n, ts)| Hyperedge::new(n.iter().copied().map(NodeId).collect(), *ts).unwrap())
            .collect();
        prop_assume!(!by_count || t <= edges.len());
        let policy = if by_count { PartitionPolicy::EqualCount(t) } else { PartitionPolicy::EqualDuration(t) };
        let g = partition_into_snapshots(edges.clone(), (0..15).collect(), policy).unwrap().graph;
        prop_assert_eq!(g.num_edges(), edges.len());
        let mut buf = Vec::new();
        g.write_json(&mut buf).unwrap();
        let back = DynamicHypergraph::read_json(Cursor::new(&buf)).unwrap();
        let mut again = Vec::new();
        back.write_json(&mut again).unwrap();
        prop_assert_eq!(buf, again);
        prop_assert_eq!(back.all_edges(), g.all_edges());
    }

    #[test]
    fn simplex_parse_preserves_edges(raw in edges()) {
        let nverts: String = raw.iter().map(|(n, _)| format!("{}\n", n.len())).collect();
        let simplices: String = raw.iter().flat_map(|(n, _)| n.iter().map(|v| format!("{}\n", v + 100))).collect();
        let times: String = raw.iter().map(|(_, t)| format!("{t}\n")).collect();
        let parsed = parse_simplex_dataset(
            Cursor::new(nverts), Cursor::new(simplices), Cursor::new(times),
        ).unwrap();
        prop_assert_eq!(parsed.edges.len(), raw.len());
        for (e, (n, t)) in parsed.edges.iter().zip(&raw) {
            prop_assert_eq!(e.timestamp(), *t);
            let mut orig: Vec<u64> = n.iter().map(|&v| u64::from(v) + 100).collect();
            orig.sort_unstable();
            orig.dedup();
            let mut mapped: Vec<u64> = e.nodes().iter().map(|v| parsed.id_map[v.index()]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, orig);
        }
    }
}

#[test]
fn trained_state_survives_checkpoint() {
    let cfg = TrainConfig {
        epochs_per_snapshot: 2,
        ..toy_config()
    };
    let out = live_update(&toy_instance(), &cfg, false).unwrap();
    let state = &out.states[0];
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &state.store, &state.hidden.to_extras()).unwrap();
    let (store, extras) = read_checkpoint(&mut Cursor::new(&buf)).unwrap();
    assert_eq!(store.len(), state.store.len());
    for (name, value) in state.store.iter() {
        assert_eq!(store.get(name), Some(value), "{name}");
        assert_eq!(store.param(name).unwrap().step, state.store.param(name).unwrap().step);
    }
    assert_eq!(HiddenStates::from_extras(&extras).unwrap(), state.hidden);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let cfg = TrainConfig {
        epochs_per_snapshot: 3,
        runs: 2,
        ..toy_config()
    };
    let g = toy_instance();
    let a = live_update(&g, &cfg, false).unwrap().report;
    let b = live_update(&g, &cfg, true).unwrap().report;
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.curves_csv(), b.curves_csv());
}

//! Predictor, losses, metrics and the live-update training protocol.
//!
//! The protocol walks the snapshot sequence. For every target snapshot `s`
//! the model encodes snapshot `s - 1` (on top of the state carried from
//! earlier snapshots) and scores node sets drawn from `s`: the positives are
//! the hyperedges of `s`, split 70/20/10 into train/validation/test, and the
//! negatives come from motif sampling. After training on `s`, the parameters
//! of the best validation epoch are restored and the state is advanced
//! through `s - 1` before moving on.

mod loss;
mod metrics;
mod model;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, grad_check_with, AdamConfig, DiffError, GradCheckReport, ParamStore, Tape};
use crate::hypercore::{partition_into_snapshots, DynamicHypergraph, HyperError, NodeId, PartitionPolicy};
use crate::inter::{HiddenStates, InterError, IntermediateLayers};
use crate::intra::{EncoderConfig, IntraError, TimeScale};
use crate::negsample::{make_candidate_batch, CandidateBatch, MnsSampler, NegError, SizePolicy};

pub use loss::{bce_loss, candidate_pooling, contrastive_loss, predict_candidate, predict_scores, total_loss, LOG_EPS};
pub use metrics::{auroc, average_precision};
pub use model::{ChainOutput, Lincoln, SnapshotInputs};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("empty batch")]
    EmptyBatch,
    #[error("candidate needs at least 2 nodes, got {0}")]
    CandidateTooSmall(usize),
    #[error("candidate has no node with a known state")]
    UnknownNode,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Intra(#[from] IntraError),
    #[error(transparent)]
    Inter(#[from] InterError),
    #[error(transparent)]
    Neg(#[from] NegError),
    #[error(transparent)]
    Hyper(#[from] HyperError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// How to re-partition the dataset before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    EqualCount,
    EqualDuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub d: usize,
    pub k: usize,
    pub beta: f64,
    pub lr: f64,
    pub epochs_per_snapshot: usize,
    pub negative_ratio: usize,
    /// When set together with `snapshots`, the dataset's edges are
    /// re-partitioned before training.
    pub policy: Option<PolicyKind>,
    pub snapshots: Option<usize>,
    pub seed: u64,
    pub intermediate_layers: IntermediateLayers,
    pub disable_pin: bool,
    pub disable_bihe: bool,
    /// Apply time injection and Bi-HE only in the first layer.
    pub enhance_first_layer_only: bool,
    pub runs: usize,
    /// Snapshots in the gradient path: 1 (detached carry) or 2.
    pub bptt_window: usize,
    /// Target snapshots with fewer distinct edges of size >= 2 are skipped.
    pub min_snapshot_edges: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 64,
            k: 2,
            beta: 0.5,
            lr: 1e-3,
            epochs_per_snapshot: 50,
            negative_ratio: 1,
            policy: None,
            snapshots: None,
            seed: 0,
            intermediate_layers: IntermediateLayers::All,
            disable_pin: false,
            disable_bihe: false,
            enhance_first_layer_only: false,
            runs: 5,
            bptt_window: 1,
            min_snapshot_edges: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.epochs_per_snapshot < 1 {
            return bad("epochs_per_snapshot must be >= 1".into());
        }
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d must be even and positive, got {}", self.d));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.negative_ratio < 1 {
            return bad("negative_ratio must be >= 1".into());
        }
        if self.runs < 1 {
            return bad("runs must be >= 1".into());
        }
        if !(1..=2).contains(&self.bptt_window) {
            return bad(format!("bptt_window must be 1 or 2, got {}", self.bptt_window));
        }
        if self.policy.is_some() != self.snapshots.is_some() {
            return bad("policy and snapshots must be given together".into());
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            disable_pin: self.disable_pin,
            disable_bihe: self.disable_bihe,
            enhance_first_layer_only: self.enhance_first_layer_only,
            ..EncoderConfig::new(self.d, self.k)
        }
    }

    /// Per-run seeds drawn from the master seed.
    pub fn run_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.runs).map(|_| rng.gen()).collect()
    }
}

/// Train/validation/test sizes by largest-remainder rounding of 70/20/10.
pub fn split_sizes(n: usize) -> [usize; 3] {
    const PARTS: [usize; 3] = [7, 2, 1];
    let mut sizes = PARTS.map(|p| p * n / 10);
    let mut rem: Vec<(usize, usize)> = PARTS.iter().enumerate().map(|(i, p)| (p * n % 10, i)).collect();
    // larger remainder first; ties favour the earlier split
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = n - sizes.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(missing) {
        sizes[i] += 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub snapshot: usize,
    pub auroc: f64,
    pub ap: f64,
    pub n_test: usize,
    pub best_epoch: usize,
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub snapshot: usize,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub snapshots: Vec<SnapshotMetrics>,
    pub skipped: Vec<usize>,
    pub mean_auroc: Option<f64>,
    pub mean_ap: Option<f64>,
    pub curves: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: TrainConfig,
    pub runs: Vec<RunReport>,
    /// Mean over runs of each run's mean over snapshots.
    pub mean_auroc: Option<f64>,
    pub mean_ap: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    fn from_runs(config: TrainConfig, runs: Vec<RunReport>) -> Self {
        Self {
            mean_auroc: mean(runs.iter().filter_map(|r| r.mean_auroc)),
            mean_ap: mean(runs.iter().filter_map(|r| r.mean_ap)),
            config,
            runs,
        }
    }

    /// Pretty JSON with object keys in sorted order.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report is serializable");
        serde_json::to_string_pretty(&value).expect("value is serializable")
    }

    /// `run,snapshot,auroc,ap,n_test`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,snapshot,auroc,ap,n_test\n");
        for r in &self.runs {
            for s in &r.snapshots {
                let _ = writeln!(out, "{},{},{},{},{}", r.run, s.snapshot, s.auroc, s.ap, s.n_test);
            }
        }
        out
    }

    /// Per-epoch `run,snapshot,epoch,train_loss,val_auroc` for plotting.
    pub fn curves_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("run,snapshot,epoch,train_loss,val_auroc\n");
        for r in &self.runs {
            for c in &r.curves {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.run,
                    c.snapshot,
                    c.epoch,
                    opt(c.train_loss),
                    opt(c.val_auroc)
                );
            }
        }
        out
    }
}

/// Final model state of one run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub store: ParamStore,
    pub hidden: HiddenStates,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: MetricsReport,
    pub states: Vec<RunState>,
}

/// Runs the live-update protocol `config.runs` times.
pub fn live_update_run(graph: &DynamicHypergraph, config: &TrainConfig) -> Result<MetricsReport> {
    Ok(live_update(graph, config, false)?.report)
}

/// As [`live_update_run`], also returning each run's final parameters and
/// state. With `parallel`, runs execute on separate threads; results do not
/// depend on it.
pub fn live_update(graph: &DynamicHypergraph, config: &TrainConfig, parallel: bool) -> Result<TrainOutcome> {
    config.validate()?;
    let repartitioned;
    let graph = match (config.policy, config.snapshots) {
        (Some(kind), Some(t)) => {
            let policy = match kind {
                PolicyKind::EqualCount => PartitionPolicy::EqualCount(t),
                PolicyKind::EqualDuration => PartitionPolicy::EqualDuration(t),
            };
            repartitioned = partition_into_snapshots(graph.all_edges(), graph.id_map().to_vec(), policy)?.graph;
            &repartitioned
        }
        _ => graph,
    };
    if graph.snapshots().len() < 2 {
        return Err(TrainError::DatasetTooSmall(format!(
            "need at least 2 snapshots, got {}",
            graph.snapshots().len()
        )));
    }
    let scale = TimeScale::for_dataset(graph);
    let inputs = graph
        .snapshots()
        .iter()
        .map(|s| SnapshotInputs::new(s, &scale, graph.node_count()))
        .collect::<Result<Vec<_>>>()?;
    let seeds = config.run_seeds();
    let results: Vec<Result<(RunReport, RunState)>> = if parallel && seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .enumerate()
                .map(|(r, &seed)| {
                    let inputs = &inputs;
                    scope.spawn(move || run_once(graph, inputs, config, r, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    } else {
        seeds
            .iter()
            .enumerate()
            .map(|(r, &seed)| run_once(graph, &inputs, config, r, seed))
            .collect()
    };
    let mut runs = Vec::with_capacity(results.len());
    let mut states = Vec::with_capacity(results.len());
    for res in results {
        let (report, state) = res?;
        runs.push(report);
        states.push(state);
    }
    Ok(TrainOutcome {
        report: MetricsReport::from_runs(config.clone(), runs),
        states,
    })
}

/// Distinct node sets of size >= 2 in a snapshot, in first-seen order.
fn distinct_positives(edges: &[crate::hypercore::Hyperedge]) -> Vec<Vec<NodeId>> {
    let mut seen = BTreeSet::new();
    edges
        .iter()
        .filter(|e| e.len() >= 2)
        .filter(|e| seen.insert(e.nodes().to_vec()))
        .map(|e| e.nodes().to_vec())
        .collect()
}

fn evaluate(
    model: &Lincoln,
    store: &ParamStore,
    out: &ChainOutput,
    tape: &mut Tape,
    batch: &CandidateBatch,
) -> Result<Option<(f64, f64, usize)>> {
    let Some((y, kept)) = model.score(tape, store, out, &batch.candidates)? else {
        return Ok(None);
    };
    let scores = tape.value(y).data().to_vec();
    let labels: Vec<u8> = kept.iter().map(|&i| batch.labels[i]).collect();
    match (auroc(&scores, &labels), average_precision(&scores, &labels)) {
        (Ok(a), Ok(p)) => Ok(Some((a, p, labels.len()))),
        (Err(TrainError::SingleClass | TrainError::NoPositives), _) | (_, Err(TrainError::NoPositives)) => Ok(None),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

struct BestEpoch {
    epoch: usize,
    val: Option<f64>,
    store: ParamStore,
    test: Option<(f64, f64, usize)>,
}

fn run_once(
    graph: &DynamicHypergraph,
    inputs: &[SnapshotInputs],
    config: &TrainConfig,
    run: usize,
    seed: u64,
) -> Result<(RunReport, RunState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Lincoln::new(config.encoder(), config.intermediate_layers, graph.node_count());
    let mut store = model.init_params(&mut rng)?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    // state before snapshot s - 1, and before s - 2 for the longer window
    let mut hidden = model.empty_state();
    let mut prev_hidden = hidden.clone();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut curves = Vec::new();

    for s in 1..graph.snapshots().len() {
        let target = &graph.snapshots()[s];
        let mut positives = distinct_positives(target.edges());
        let (chain, start): (Vec<&SnapshotInputs>, &HiddenStates) = if config.bptt_window == 2 && s >= 2 {
            (vec![&inputs[s - 2], &inputs[s - 1]], &prev_hidden)
        } else {
            (vec![&inputs[s - 1]], &hidden)
        };

        if positives.len() < config.min_snapshot_edges.max(1) {
            warn!(
                "run {run}: skipping snapshot {s} ({} usable edges < {})",
                positives.len(),
                config.min_snapshot_edges
            );
            skipped.push(s);
        } else {
            positives.shuffle(&mut rng);
            let [n_train, n_val, _] = split_sizes(positives.len());
            let (train, rest) = positives.split_at(n_train);
            let (val, test) = rest.split_at(n_val);
            let sampler = MnsSampler::new(target);
            let ratio = config.negative_ratio;
            let policy = SizePolicy::MatchPositive;
            let val_batch = make_candidate_batch(&sampler, val, ratio, policy, &mut rng)?;
            let test_batch = make_candidate_batch(&sampler, test, ratio, policy, &mut rng)?;

            let mut best: Option<BestEpoch> = None;
            for epoch in 0..config.epochs_per_snapshot {
                let train_batch = make_candidate_batch(&sampler, train, ratio, policy, &mut rng)?;
                let mut tape = Tape::new();
                let out = model.forward_chain(&mut tape, &store, &chain, start)?;
                let loss = model.loss(
                    &mut tape,
                    &store,
                    &out,
                    &train_batch.candidates,
                    &train_batch.labels,
                    config.beta,
                )?;
                let train_loss = match loss {
                    Some(l) => {
                        let grads = tape.backward(l, &store)?;
                        adam_step(&mut store, &grads, &adam)?;
                        tape.value(l).item()
                    }
                    None => None,
                };

                let mut tape = Tape::new();
                let out = model.forward_chain(&mut tape, &store, &chain, start)?;
                let val = evaluate(&model, &store, &out, &mut tape, &val_batch)?.map(|v| v.0);
                curves.push(CurvePoint {
                    snapshot: s,
                    epoch,
                    train_loss,
                    val_auroc: val,
                });
                let better = match (&best, val) {
                    (None, _) => true,
                    (Some(b), Some(v)) => b.val.is_none_or(|bv| v > bv),
                    (Some(_), None) => false,
                };
                if better {
                    best = Some(BestEpoch {
                        epoch,
                        val,
                        store: store.clone(),
                        test: evaluate(&model, &store, &out, &mut tape, &test_batch)?,
                    });
                }
            }
            let best = best.expect("at least one epoch");
            store = best.store;
            match best.test {
                Some((auroc, ap, n_test)) => rows.push(SnapshotMetrics {
                    snapshot: s,
                    auroc,
                    ap,
                    n_test,
                    best_epoch: best.epoch,
                    val_auroc: best.val,
                }),
                None => {
                    warn!("run {run}: snapshot {s} test batch has a single class; no metrics");
                    skipped.push(s);
                }
            }
        }

        // advance the carried state through s - 1 with the kept parameters
        let mut tape = Tape::new();
        let out = model.forward_chain(&mut tape, &store, &[&inputs[s - 1]], &hidden)?;
        prev_hidden = std::mem::replace(&mut hidden, out.detach(&tape));
    }
    // fold in the final snapshot so the saved state covers the whole sequence
    if let Some(last) = inputs.last() {
        let mut tape = Tape::new();
        let out = model.forward_chain(&mut tape, &store, &[last], &hidden)?;
        hidden = out.detach(&tape);
    }
    let report = RunReport {
        run,
        seed,
        mean_auroc: mean(rows.iter().map(|r| r.auroc)),
        mean_ap: mean(rows.iter().map(|r| r.ap)),
        snapshots: rows,
        skipped,
        curves,
    };
    info!(
        "run {run} (seed {seed}): mean auroc {:?}, mean ap {:?}",
        report.mean_auroc, report.mean_ap
    );
    Ok((report, RunState { store, hidden }))
}

/// Settings of the bundled gradient-check instance: every component on.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        d: 4,
        k: 2,
        runs: 1,
        bptt_window: 2,
        min_snapshot_edges: 1,
        ..TrainConfig::default()
    }
}

/// Checks the gradient of the full loss on the toy instance: both
/// snapshots are encoded in one chain so the recurrent path is covered, and
/// fixed candidates on the second snapshot are scored. `corrupt` perturbs
/// one analytic gradient entry, which the check must catch.
pub fn toy_gradient_check(config: &TrainConfig, epsilon: f64, corrupt: bool) -> Result<GradCheckReport> {
    config.validate()?;
    let graph = crate::synth::toy_instance();
    let scale = TimeScale::for_dataset(&graph);
    let inputs = graph
        .snapshots()
        .iter()
        .map(|s| SnapshotInputs::new(s, &scale, graph.node_count()))
        .collect::<Result<Vec<_>>>()?;
    let chain: Vec<&SnapshotInputs> = inputs.iter().collect();
    let model = Lincoln::new(config.encoder(), config.intermediate_layers, graph.node_count());
    let store = model.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let start = model.empty_state();
    let (candidates, labels) = crate::synth::toy_candidates();
    let f = |tape: &mut Tape, store: &ParamStore| -> Result<crate::diffcore::Var> {
        let out = model.forward_chain(tape, store, &chain, &start)?;
        model
            .loss(tape, store, &out, &candidates, &labels, config.beta)?
            .ok_or(TrainError::EmptyBatch)
    };
    grad_check_with(&store, epsilon, f, |grads| {
        if corrupt {
            if let Some(g) = grads.values_mut().next() {
                g.data_mut()[0] += 1.0;
            }
        }
    })
}

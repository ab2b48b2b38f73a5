//! Encoding within one snapshot.
//!
//! Each layer injects a periodic snapshot-time signal into the node
//! embeddings through a per-node gate, pools nodes into hyperedges, refines
//! hyperedge embeddings on a structural and a temporal proximity graph,
//! fuses the two views and pools hyperedges back into nodes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::hypercore::{DynamicHypergraph, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum IntraError {
    #[error("time embedding dimension must be even, got {0}")]
    OddDimension(usize),
    #[error("temporal scale must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("snapshot has no hyperedges")]
    EmptySnapshot,
    #[error("encoder needs at least one layer")]
    NoLayers,
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T, E = IntraError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self {
            Self::Relu => tape.relu(x)?,
            Self::Identity => x,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub k: usize,
    pub disable_pin: bool,
    pub disable_bihe: bool,
    /// Apply time injection and proximity-graph refinement in layer 1 only.
    pub enhance_first_layer_only: bool,
    pub activation: Activation,
}

impl EncoderConfig {
    pub fn new(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            disable_pin: false,
            disable_bihe: false,
            enhance_first_layer_only: false,
            activation: Activation::Relu,
        }
    }

    fn pin_at(&self, layer: usize) -> bool {
        !self.disable_pin && (!self.enhance_first_layer_only || layer == 1)
    }

    fn bihe_at(&self, layer: usize) -> bool {
        !self.disable_bihe && (!self.enhance_first_layer_only || layer == 1)
    }
}

/// Maps native timestamps to the unit used by the time embedding:
/// `(t - origin) / unit`, with `unit` the mean snapshot duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub origin: i64,
    pub unit: f64,
}

impl TimeScale {
    pub fn identity() -> Self {
        Self { origin: 0, unit: 1.0 }
    }

    pub fn for_dataset(graph: &DynamicHypergraph) -> Self {
        let s = graph.snapshots();
        match (s.first(), s.last()) {
            (Some(a), Some(b)) => {
                let span = (b.spec().t_end - a.spec().t_start) as f64;
                Self {
                    origin: a.spec().t_start,
                    unit: (span / s.len() as f64).max(f64::MIN_POSITIVE),
                }
            }
            _ => Self::identity(),
        }
    }

    pub fn apply(&self, t: i64) -> f64 {
        (t - self.origin) as f64 / self.unit
    }
}

/// `concat(cos(omega * t_start + phi), cos(omega * t_end + phi))` for plain
/// values. `d` must be even and equal `2 * omega.len()`.
pub fn periodic_time_values(t_start: f64, t_end: f64, omega: &[f64], phi: &[f64], d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(IntraError::OddDimension(d));
    }
    if omega.len() != d / 2 || phi.len() != d / 2 {
        return Err(DiffError::ShapeMismatch {
            op: "periodic_time_values",
            left: vec![omega.len(), phi.len()],
            right: vec![d / 2],
        }
        .into());
    }
    let half = |t: f64| omega.iter().zip(phi).map(move |(w, p)| (w * t + p).cos());
    Ok(half(t_start).chain(half(t_end)).collect())
}

/// Tape version of [`periodic_time_values`]; returns a `1 x 2m` row where
/// `m` is the number of frequencies.
pub fn periodic_time_embedding(tape: &mut Tape, t_start: f64, t_end: f64, omega: Var, phi: Var) -> Result<Var> {
    let a = tape.cos_affine(omega, phi, t_start)?;
    let b = tape.cos_affine(omega, phi, t_end)?;
    Ok(tape.hcat(a, b)?)
}

/// Projections of the snapshot-aware gate.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
}

impl AttentionVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut p = |n: &str| tape.param(store, &format!("{prefix}.{n}"));
        Ok(Self {
            w_q: p("w_q")?,
            b_q: p("b_q")?,
            w_k: p("w_k")?,
            b_k: p("b_k")?,
            w_v: p("w_v")?,
            b_v: p("b_v")?,
        })
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let xw = tape.matmul(x, w)?;
    let bb = tape.broadcast_row(b, rows)?;
    Ok(tape.add(xw, bb)?)
}

/// Gated residual injection of the snapshot time signal:
/// `s_v = (p_v W_q + b_q) . (snap W_k + b_k) / sqrt(d)`,
/// `p'_v = p_v + sigmoid(s_v) * (snap W_v + b_v)`.
pub fn snapshot_attention(tape: &mut Tape, p: Var, snap: Var, att: &AttentionVars) -> Result<Var> {
    let d = tape.value(p).cols();
    if tape.value(snap).dims2() != (1, d) {
        return Err(DiffError::ShapeMismatch {
            op: "snapshot_attention",
            left: tape.value(p).shape().to_vec(),
            right: tape.value(snap).shape().to_vec(),
        }
        .into());
    }
    let query = affine(tape, p, att.w_q, att.b_q)?;
    let key = affine(tape, snap, att.w_k, att.b_k)?;
    let key_t = tape.transpose(key)?;
    let score = tape.matmul(query, key_t)?;
    let score = tape.scale(score, 1.0 / (d as f64).sqrt())?;
    let gate = tape.sigmoid(score)?;
    let value = affine(tape, snap, att.w_v, att.b_v)?;
    let injection = tape.matmul(gate, value)?;
    Ok(tape.add(p, injection)?)
}

/// `act(D_E^-1 H^T P W + b)`; `n2e` is the precomputed `D_E^-1 H^T`.
pub fn n2e_aggregate(tape: &mut Tape, n2e: &Arc<SparseMatrix>, p: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let pooled = tape.spmm(n2e, p)?;
    let z = affine(tape, pooled, w, b)?;
    act.apply(tape, z)
}

/// `act(D_V^-1 H Q W + b)`; `e2n` is the precomputed `D_V^-1 H`.
pub fn e2n_aggregate(tape: &mut Tape, e2n: &Arc<SparseMatrix>, q: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let pooled = tape.spmm(e2n, q)?;
    let z = affine(tape, pooled, w, b)?;
    act.apply(tape, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityKind {
    Structural,
    Temporal,
}

/// Weighted graph whose vertices are the hyperedges of one snapshot.
/// Stores each undirected pair once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    pub n: usize,
    pub kind: ProximityKind,
    pub weights: Vec<(usize, usize, f64)>,
}

impl ProximityGraph {
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.weights
            .binary_search_by_key(&(a, b), |&(x, y, _)| (x, y))
            .ok()
            .map(|k| self.weights[k].2)
    }

    /// Symmetric adjacency with unit self-loops, normalised as
    /// `D^-1/2 (A + I) D^-1/2`.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let mut degree = vec![1.0; self.n];
        for &(i, j, w) in &self.weights {
            degree[i] += w;
            degree[j] += w;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut entries = Vec::with_capacity(self.n + 2 * self.weights.len());
        for (i, s) in inv_sqrt.iter().enumerate() {
            entries.push((i, i, s * s));
        }
        for &(i, j, w) in &self.weights {
            let v = w * inv_sqrt[i] * inv_sqrt[j];
            entries.push((i, j, v));
            entries.push((j, i, v));
        }
        SparseMatrix::new(self.n, self.n, entries).expect("proximity entries are unique")
    }
}

/// Structural (Jaccard) and temporal (`exp(-|dt| / tau)`) graphs over the
/// hyperedges of a snapshot. Only pairs sharing at least one node are
/// connected, so both graphs have the same sparsity pattern.
pub fn build_proximity_graphs(snapshot: &Snapshot, tau: f64) -> Result<(ProximityGraph, ProximityGraph)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(IntraError::InvalidTau(tau));
    }
    let edges = snapshot.edges();
    if edges.is_empty() {
        return Err(IntraError::EmptySnapshot);
    }
    let mut by_node: HashMap<_, Vec<usize>> = HashMap::new();
    for (j, e) in edges.iter().enumerate() {
        for n in e.nodes() {
            by_node.entry(*n).or_default().push(j);
        }
    }
    let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
    for list in by_node.values() {
        for (x, &i) in list.iter().enumerate() {
            for &j in &list[x + 1..] {
                *shared.entry((i, j)).or_default() += 1;
            }
        }
    }
    let mut pairs: Vec<_> = shared.into_iter().collect();
    pairs.sort_unstable_by_key(|&(k, _)| k);

    let mut structural = Vec::with_capacity(pairs.len());
    let mut temporal = Vec::with_capacity(pairs.len());
    for ((i, j), inter) in pairs {
        let union = edges[i].len() + edges[j].len() - inter;
        structural.push((i, j, inter as f64 / union as f64));
        let dt = (edges[i].timestamp() - edges[j].timestamp()).abs() as f64;
        temporal.push((i, j, (-dt / tau).exp()));
    }
    let n = edges.len();
    Ok((
        ProximityGraph {
            n,
            kind: ProximityKind::Structural,
            weights: structural,
        },
        ProximityGraph {
            n,
            kind: ProximityKind::Temporal,
            weights: temporal,
        },
    ))
}

/// Debug dump: `edge_i,edge_j,w_s,w_t`.
pub fn proximity_csv(structural: &ProximityGraph, temporal: &ProximityGraph) -> String {
    let mut out = String::from("edge_i,edge_j,w_s,w_t\n");
    for (&(i, j, ws), &(_, _, wt)) in structural.weights.iter().zip(&temporal.weights) {
        let _ = writeln!(out, "{i},{j},{ws},{wt}");
    }
    out
}

/// One GCN layer `act(A_hat Q W)`; `adj` is the normalised adjacency.
pub fn gcn_propagate(tape: &mut Tape, q: Var, adj: &Arc<SparseMatrix>, w: Var, act: Activation) -> Result<Var> {
    let mixed = tape.spmm(adj, q)?;
    let z = tape.matmul(mixed, w)?;
    act.apply(tape, z)
}

/// `act([Q_S | Q_T] W_ST + b_ST)` with `W_ST` of shape `2d x d`.
pub fn st_aggregate(tape: &mut Tape, qs: Var, qt: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let both = tape.hcat(qs, qt)?;
    let z = affine(tape, both, w, b)?;
    act.apply(tape, z)
}

/// Snapshot-derived constants reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub n2e: Arc<SparseMatrix>,
    pub e2n: Arc<SparseMatrix>,
    pub adj_structural: Arc<SparseMatrix>,
    pub adj_temporal: Arc<SparseMatrix>,
    pub t_start: f64,
    pub t_end: f64,
}

impl PreparedSnapshot {
    /// `tau` for the temporal graph is the snapshot's own duration.
    pub fn new(snapshot: &Snapshot, scale: &TimeScale) -> Result<Self> {
        let h = snapshot.incidence();
        let inv_de: Vec<f64> = snapshot.edge_degrees().iter().map(|d| 1.0 / *d as f64).collect();
        let inv_dv: Vec<f64> = snapshot.node_degrees().iter().map(|d| 1.0 / *d as f64).collect();
        let n2e = h.transpose().scale_rows(&inv_de);
        let e2n = h.scale_rows(&inv_dv);
        let tau = snapshot.spec().duration() as f64;
        let (gs, gt) = build_proximity_graphs(snapshot, tau)?;
        Ok(Self {
            num_nodes: snapshot.num_nodes(),
            num_edges: snapshot.num_edges(),
            n2e: Arc::new(n2e),
            e2n: Arc::new(e2n),
            adj_structural: Arc::new(gs.normalized_adjacency()),
            adj_temporal: Arc::new(gt.normalized_adjacency()),
            t_start: scale.apply(snapshot.spec().t_start),
            t_end: scale.apply(snapshot.spec().t_end),
        })
    }
}

/// Per-layer embeddings of one snapshot.
#[derive(Debug, Clone)]
pub struct LayerStack {
    /// `P^(0) .. P^(k)`, each `|V_t| x d`.
    pub p: Vec<Var>,
    /// Node-to-hyperedge outputs `Q^(1) .. Q^(k)`.
    pub q: Vec<Var>,
    /// Hyperedge embeddings fed back to nodes (equal to `q` when Bi-HE is off).
    pub q_prime: Vec<Var>,
    /// Last structural / temporal hyperedge embeddings, when computed.
    pub q_structural: Option<Var>,
    pub q_temporal: Option<Var>,
    pub snap: Option<Var>,
}

pub fn layer_prefix(layer: usize) -> String {
    format!("layer{layer}")
}

/// Registers time, attention and aggregation parameters for `k` layers.
pub fn register_encoder_params<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<()> {
    let d = cfg.d;
    if !d.is_multiple_of(2) {
        return Err(IntraError::OddDimension(d));
    }
    if cfg.k == 0 {
        return Err(IntraError::NoLayers);
    }
    let m = d / 2;
    let omega: Vec<f64> = (0..m)
        .map(|i| {
            let frac = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.0 };
            let period = 2.0 * 32f64.powf(frac);
            2.0 * std::f64::consts::PI / period
        })
        .collect();
    store.register("time.omega", Tensor::row_vector(omega))?;
    store.register("time.phi", Tensor::zeros(&[1, m]))?;
    for l in 1..=cfg.k {
        let pre = layer_prefix(l);
        for n in ["w_q", "w_k", "w_v"] {
            store.register_uniform(&format!("{pre}.att.{n}"), &[d, d], d, rng)?;
        }
        for n in ["b_q", "b_k", "b_v"] {
            store.register_uniform(&format!("{pre}.att.{n}"), &[1, d], d, rng)?;
        }
        for stage in ["n2e", "e2n"] {
            store.register_uniform(&format!("{pre}.{stage}.w"), &[d, d], d, rng)?;
            store.register_uniform(&format!("{pre}.{stage}.b"), &[1, d], d, rng)?;
        }
        store.register_uniform(&format!("{pre}.gcn_s.w"), &[d, d], d, rng)?;
        store.register_uniform(&format!("{pre}.gcn_t.w"), &[d, d], d, rng)?;
        store.register_uniform(&format!("{pre}.st.w"), &[2 * d, d], 2 * d, rng)?;
        store.register_uniform(&format!("{pre}.st.b"), &[1, d], 2 * d, rng)?;
    }
    Ok(())
}

/// Runs all `k` layers on one snapshot.
///
/// `carry[l]`, when present, is added to `P^(l)` before it enters layer
/// `l + 1` (`carry[0]` mixes into the input embeddings). The mixed values are
/// what the stack records.
pub fn encode_snapshot(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    prep: &PreparedSnapshot,
    p_in: Var,
    carry: &[Option<Var>],
) -> Result<LayerStack> {
    if cfg.k == 0 {
        return Err(IntraError::NoLayers);
    }
    if !cfg.d.is_multiple_of(2) {
        return Err(IntraError::OddDimension(cfg.d));
    }
    if prep.num_edges == 0 {
        return Err(IntraError::EmptySnapshot);
    }
    let (rows, cols) = tape.value(p_in).dims2();
    if rows != prep.num_nodes || cols != cfg.d {
        return Err(DiffError::ShapeMismatch {
            op: "encode_snapshot",
            left: vec![rows, cols],
            right: vec![prep.num_nodes, cfg.d],
        }
        .into());
    }
    let act = cfg.activation;
    let needs_snap = (1..=cfg.k).any(|l| cfg.pin_at(l));
    let snap = if needs_snap {
        let omega = tape.param(store, "time.omega")?;
        let phi = tape.param(store, "time.phi")?;
        Some(periodic_time_embedding(tape, prep.t_start, prep.t_end, omega, phi)?)
    } else {
        None
    };

    let mix = |tape: &mut Tape, l: usize, x: Var| -> Result<Var> {
        match carry.get(l).copied().flatten() {
            Some(c) => Ok(tape.add(x, c)?),
            None => Ok(x),
        }
    };

    let mut stack = LayerStack {
        p: Vec::with_capacity(cfg.k + 1),
        q: Vec::with_capacity(cfg.k),
        q_prime: Vec::with_capacity(cfg.k),
        q_structural: None,
        q_temporal: None,
        snap,
    };
    let p0 = mix(tape, 0, p_in)?;
    stack.p.push(p0);
    for l in 1..=cfg.k {
        let pre = layer_prefix(l);
        let prev = *stack.p.last().unwrap();
        let p_att = match (cfg.pin_at(l), snap) {
            (true, Some(s)) => {
                let att = AttentionVars::bind(tape, store, &format!("{pre}.att"))?;
                snapshot_attention(tape, prev, s, &att)?
            }
            _ => prev,
        };
        let w = tape.param(store, &format!("{pre}.n2e.w"))?;
        let b = tape.param(store, &format!("{pre}.n2e.b"))?;
        let q = n2e_aggregate(tape, &prep.n2e, p_att, w, b, act)?;
        stack.q.push(q);

        let q_prime = if cfg.bihe_at(l) {
            let ws = tape.param(store, &format!("{pre}.gcn_s.w"))?;
            let wt = tape.param(store, &format!("{pre}.gcn_t.w"))?;
            let qs = gcn_propagate(tape, q, &prep.adj_structural, ws, act)?;
            let qt = gcn_propagate(tape, q, &prep.adj_temporal, wt, act)?;
            stack.q_structural = Some(qs);
            stack.q_temporal = Some(qt);
            let w = tape.param(store, &format!("{pre}.st.w"))?;
            let b = tape.param(store, &format!("{pre}.st.b"))?;
            st_aggregate(tape, qs, qt, w, b, act)?
        } else {
            q
        };
        stack.q_prime.push(q_prime);

        let w = tape.param(store, &format!("{pre}.e2n.w"))?;
        let b = tape.param(store, &format!("{pre}.e2n.b"))?;
        let p = e2n_aggregate(tape, &prep.e2n, q_prime, w, b, act)?;
        let p = if l < cfg.k { mix(tape, l, p)? } else { p };
        stack.p.push(p);
    }
    Ok(stack)
}

//! Recurrent node state carried across snapshots, one GRU per encoder layer.
//!
//! Gate convention: `z` moves the state toward the candidate,
//! `h' = (1 - z) * h + z * h~`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::hypercore::NodeId;
use crate::intra::LayerStack;

#[derive(Debug, thiserror::Error)]
pub enum InterError {
    #[error("node {node} out of range for {count} global nodes")]
    IndexOutOfRange { node: usize, count: usize },
    #[error("layer stack has {stack} levels but {hidden} hidden layers were supplied")]
    LayerCountMismatch { stack: usize, hidden: usize },
    #[error("hidden state extras malformed: {0}")]
    BadState(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T, E = InterError> = std::result::Result<T, E>;

/// Which encoder levels keep a recurrent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntermediateLayers {
    /// Only `P^(k)`.
    FinalOnly,
    /// The upper half of `0..=k`.
    Half,
    /// Every level `0..=k`.
    #[default]
    All,
}

impl IntermediateLayers {
    pub fn tracks(self, layer: usize, k: usize) -> bool {
        match self {
            Self::FinalOnly => layer == k,
            Self::Half => layer >= k.div_ceil(2),
            Self::All => layer <= k,
        }
    }

    pub fn tracked_layers(self, k: usize) -> Vec<usize> {
        (0..=k).filter(|&l| self.tracks(l, k)).collect()
    }
}

/// Global per-layer node states (`node_count x d` each) plus a seen flag.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    layers: Vec<Tensor>,
    seen: Vec<bool>,
}

impl HiddenStates {
    pub fn new(k: usize, node_count: usize, d: usize) -> Self {
        Self {
            layers: (0..=k).map(|_| Tensor::zeros(&[node_count, d])).collect(),
            seen: vec![false; node_count],
        }
    }

    /// Builds a state from per-layer tables and seen flags.
    pub fn from_parts(layers: Vec<Tensor>, seen: Vec<bool>) -> Self {
        Self { layers, seen }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn node_count(&self) -> usize {
        self.seen.len()
    }

    pub fn layer(&self, l: usize) -> &Tensor {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    pub fn is_seen(&self, node: NodeId) -> bool {
        self.seen.get(node.index()).copied().unwrap_or(false)
    }

    /// Replaces layer states and marks `nodes` as seen.
    pub fn commit(&mut self, layers: Vec<Tensor>, nodes: &[NodeId]) -> Result<()> {
        if layers.len() != self.layers.len() {
            return Err(InterError::LayerCountMismatch {
                stack: layers.len(),
                hidden: self.layers.len(),
            });
        }
        for n in nodes {
            let count = self.seen.len();
            *self
                .seen
                .get_mut(n.index())
                .ok_or(InterError::IndexOutOfRange { node: n.index(), count })? = true;
        }
        self.layers = layers;
        Ok(())
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Tensor {
        &mut self.layers[l]
    }

    /// Named tensors for the checkpoint file.
    pub fn to_extras(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, t)| (format!("hidden.{l}"), t.clone()))
            .collect();
        let seen = self.seen.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        out.insert("hidden.seen".into(), Tensor::column_vector(seen));
        out
    }

    pub fn from_extras(extras: &BTreeMap<String, Tensor>) -> Result<Self> {
        let seen_t = extras
            .get("hidden.seen")
            .ok_or_else(|| InterError::BadState("missing hidden.seen".into()))?;
        let seen: Vec<bool> = seen_t.data().iter().map(|&x| x != 0.0).collect();
        let mut layers = Vec::new();
        while let Some(t) = extras.get(&format!("hidden.{}", layers.len())) {
            if t.rows() != seen.len() {
                return Err(InterError::BadState("row count differs from seen flags".into()));
            }
            layers.push(t.clone());
        }
        if layers.is_empty() {
            return Err(InterError::BadState("no hidden layers".into()));
        }
        Ok(Self { layers, seen })
    }
}

/// GRU weights bound on a tape. Row-vector convention: `x W + h U + b`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

pub fn gru_prefix(layer: usize) -> String {
    format!("gru{layer}")
}

impl GruVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut p = |n: &str| tape.param(store, &format!("{prefix}.{n}"));
        Ok(Self {
            w_z: p("w_z")?,
            u_z: p("u_z")?,
            b_z: p("b_z")?,
            w_r: p("w_r")?,
            u_r: p("u_r")?,
            b_r: p("b_r")?,
            w_h: p("w_h")?,
            u_h: p("u_h")?,
            b_h: p("b_h")?,
        })
    }
}

/// One independent cell per tracked layer.
pub fn register_gru_params<R: Rng>(store: &mut ParamStore, d: usize, layers: &[usize], rng: &mut R) -> Result<()> {
    for &l in layers {
        let pre = gru_prefix(l);
        for g in ["z", "r", "h"] {
            store.register_uniform(&format!("{pre}.w_{g}"), &[d, d], d, rng)?;
            store.register_uniform(&format!("{pre}.u_{g}"), &[d, d], d, rng)?;
            store.register_uniform(&format!("{pre}.b_{g}"), &[1, d], d, rng)?;
        }
    }
    Ok(())
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    let bb = tape.broadcast_row(b, rows)?;
    Ok(tape.add(s, bb)?)
}

/// Row-wise GRU update of state `h` with input `x` (both `n x d`).
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, c: &GruVars) -> Result<Var> {
    let z_pre = gate(tape, x, h, c.w_z, c.u_z, c.b_z)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, x, h, c.w_r, c.u_r, c.b_r)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, x, rh, c.w_h, c.u_h, c.b_h)?;
    let cand = tape.tanh(cand_pre)?;
    let (n, d) = tape.value(z).dims2();
    let ones = tape.constant(Tensor::filled(&[n, d], 1.0))?;
    let keep = tape.sub(ones, z)?;
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    Ok(tape.add(old, new)?)
}

/// Sparse gather/scatter operators between a snapshot's local nodes and the
/// global state table.
#[derive(Debug, Clone)]
pub struct NodeSelection {
    /// `|V_t| x N`: picks local rows out of a global matrix.
    pub gather: Arc<SparseMatrix>,
    /// `N x |V_t|`: places local rows back at their global positions.
    pub scatter: Arc<SparseMatrix>,
    /// `N x N` diagonal that zeroes local rows and keeps the rest.
    pub keep_others: Arc<SparseMatrix>,
}

impl NodeSelection {
    pub fn new(local_nodes: &[NodeId], node_count: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(local_nodes.len());
        let mut keep = vec![1.0; node_count];
        for (i, n) in local_nodes.iter().enumerate() {
            if n.index() >= node_count {
                return Err(InterError::IndexOutOfRange {
                    node: n.index(),
                    count: node_count,
                });
            }
            entries.push((i, n.index(), 1.0));
            keep[n.index()] = 0.0;
        }
        let gather = SparseMatrix::new(local_nodes.len(), node_count, entries)
            .map_err(|_| InterError::BadState("local node ids are not distinct".into()))?;
        Ok(Self {
            scatter: Arc::new(gather.transpose()),
            gather: Arc::new(gather),
            keep_others: Arc::new(SparseMatrix::diagonal(&keep)?),
        })
    }

    pub fn gather(&self, tape: &mut Tape, global: Var) -> Result<Var> {
        Ok(tape.spmm(&self.gather, global)?)
    }
}

/// GRU update for the local rows of one layer. Returns the updated local
/// rows `P*` and the new global table; rows of non-local nodes are copied
/// unchanged.
pub fn temporal_update(
    tape: &mut Tape,
    p_layer: Var,
    hidden: Var,
    cell: &GruVars,
    sel: &NodeSelection,
) -> Result<(Var, Var)> {
    let prev = sel.gather(tape, hidden)?;
    let h_new = gru_cell(tape, p_layer, prev, cell)?;
    let kept = tape.spmm(&sel.keep_others, hidden)?;
    let placed = tape.spmm(&sel.scatter, h_new)?;
    let global = tape.add(kept, placed)?;
    Ok((h_new, global))
}

#[derive(Debug, Clone)]
pub struct Advanced {
    /// `P*^(l)` for tracked layers.
    pub p_star: Vec<Option<Var>>,
    /// Global state per layer after the update.
    pub hidden: Vec<Var>,
}

/// Applies [`temporal_update`] independently at every tracked level of the
/// stack. `cells[l]` is `None` for untracked levels, whose state passes
/// through untouched.
pub fn advance_snapshot(
    tape: &mut Tape,
    stack: &LayerStack,
    hidden: &[Var],
    cells: &[Option<GruVars>],
    sel: &NodeSelection,
) -> Result<Advanced> {
    if stack.p.len() != hidden.len() || cells.len() != hidden.len() {
        return Err(InterError::LayerCountMismatch {
            stack: stack.p.len(),
            hidden: hidden.len(),
        });
    }
    let mut p_star = Vec::with_capacity(hidden.len());
    let mut next = Vec::with_capacity(hidden.len());
    for (l, (&h, cell)) in hidden.iter().zip(cells).enumerate() {
        match cell {
            Some(c) => {
                let (ps, g) = temporal_update(tape, stack.p[l], h, c, sel)?;
                p_star.push(Some(ps));
                next.push(g);
            }
            None => {
                p_star.push(None);
                next.push(h);
            }
        }
    }
    Ok(Advanced { p_star, hidden: next })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_selection_modes() {
        assert_eq!(IntermediateLayers::FinalOnly.tracked_layers(2), vec![2]);
        assert_eq!(IntermediateLayers::Half.tracked_layers(2), vec![1, 2]);
        assert_eq!(IntermediateLayers::All.tracked_layers(2), vec![0, 1, 2]);
        assert_eq!(IntermediateLayers::Half.tracked_layers(3), vec![2, 3]);
    }

    #[test]
    fn selection_rejects_out_of_range() {
        assert!(matches!(
            NodeSelection::new(&[NodeId(5)], 3),
            Err(InterError::IndexOutOfRange { node: 5, count: 3 })
        ));
    }

    #[test]
    fn extras_round_trip() {
        let mut h = HiddenStates::new(1, 3, 2);
        h.layer_mut(1).set(2, 1, 0.5);
        h.commit(h.layers().to_vec(), &[NodeId(2)]).unwrap();
        let back = HiddenStates::from_extras(&h.to_extras()).unwrap();
        assert_eq!(back, h);
    }
}

//! The full model: learnable node features, the per-snapshot encoder, the
//! recurrent state update and the pooled predictor.

use rand::Rng;

use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::hypercore::{NodeId, Snapshot};
use crate::inter::{
    advance_snapshot, gru_prefix, register_gru_params, GruVars, HiddenStates, IntermediateLayers, NodeSelection,
};
use crate::intra::{encode_snapshot, register_encoder_params, EncoderConfig, LayerStack, PreparedSnapshot, TimeScale};

use super::loss::{bce_loss, candidate_pooling, contrastive_loss, predict_scores, total_loss};
use super::Result;

/// Per-snapshot constants: encoder operators and gather/scatter maps.
#[derive(Debug, Clone)]
pub struct SnapshotInputs {
    pub prep: PreparedSnapshot,
    pub sel: NodeSelection,
    pub nodes: Vec<NodeId>,
}

impl SnapshotInputs {
    pub fn new(snapshot: &Snapshot, scale: &TimeScale, node_count: usize) -> Result<Self> {
        Ok(Self {
            prep: PreparedSnapshot::new(snapshot, scale)?,
            sel: NodeSelection::new(snapshot.local_nodes(), node_count)?,
            nodes: snapshot.local_nodes().to_vec(),
        })
    }
}

/// Output of running the model over a chain of snapshots.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Layer stacks, one per snapshot in the chain.
    pub stacks: Vec<LayerStack>,
    /// Global state per layer after the last snapshot.
    pub hidden: Vec<Var>,
    /// Seen flags after the last snapshot.
    pub seen: Vec<bool>,
}

impl ChainOutput {
    /// `P*` for every node: the updated top-layer state table.
    pub fn p_star(&self) -> Var {
        *self.hidden.last().expect("at least one layer")
    }

    /// Hidden states with the chain's values, for carrying forward.
    pub fn detach(&self, tape: &Tape) -> HiddenStates {
        let layers = self.hidden.iter().map(|&v| tape.value(v).clone()).collect();
        HiddenStates::from_parts(layers, self.seen.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Lincoln {
    pub encoder: EncoderConfig,
    pub layers: IntermediateLayers,
    pub node_count: usize,
}

impl Lincoln {
    pub fn new(encoder: EncoderConfig, layers: IntermediateLayers, node_count: usize) -> Self {
        Self {
            encoder,
            layers,
            node_count,
        }
    }

    pub fn tracked(&self) -> Vec<usize> {
        self.layers.tracked_layers(self.encoder.k)
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamStore> {
        let d = self.encoder.d;
        let mut store = ParamStore::new();
        store.register_uniform("features", &[self.node_count, d], d, rng)?;
        register_encoder_params(&mut store, &self.encoder, rng)?;
        register_gru_params(&mut store, d, &self.tracked(), rng)?;
        store.register_uniform("pred.w", &[d, 1], d, rng)?;
        store.register("pred.b", Tensor::zeros(&[1, 1]))?;
        Ok(store)
    }

    pub fn empty_state(&self) -> HiddenStates {
        HiddenStates::new(self.encoder.k, self.node_count, self.encoder.d)
    }

    /// Encodes `chain` in order starting from the detached `start` state;
    /// gradients flow through the state between snapshots of the chain.
    pub fn forward_chain(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        chain: &[&SnapshotInputs],
        start: &HiddenStates,
    ) -> Result<ChainOutput> {
        let k = self.encoder.k;
        let mut hidden = start
            .layers()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut seen = start.seen().to_vec();
        let cells = (0..=k)
            .map(|l| {
                if self.layers.tracks(l, k) {
                    GruVars::bind(tape, store, &gru_prefix(l)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let features = tape.param(store, "features")?;
        let mut stacks = Vec::with_capacity(chain.len());
        for input in chain {
            let p_in = input.sel.gather(tape, features)?;
            let mut carry = Vec::with_capacity(k);
            for (l, &h) in hidden.iter().enumerate().take(k) {
                carry.push(if self.layers.tracks(l, k) {
                    Some(input.sel.gather(tape, h)?)
                } else {
                    None
                });
            }
            let stack = encode_snapshot(tape, store, &self.encoder, &input.prep, p_in, &carry)?;
            let adv = advance_snapshot(tape, &stack, &hidden, &cells, &input.sel)?;
            hidden = adv.hidden;
            for n in &input.nodes {
                seen[n.index()] = true;
            }
            stacks.push(stack);
        }
        Ok(ChainOutput { stacks, hidden, seen })
    }

    /// Scores `candidates` from the chain's `P*`. Returns the probabilities
    /// and the indices of the candidates that had a known node.
    pub fn score(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        out: &ChainOutput,
        candidates: &[Vec<NodeId>],
    ) -> Result<Option<(Var, Vec<usize>)>> {
        let (pooling, kept) = candidate_pooling(candidates, &out.seen, self.node_count)?;
        if kept.is_empty() {
            return Ok(None);
        }
        let w = tape.param(store, "pred.w")?;
        let b = tape.param(store, "pred.b")?;
        let y = predict_scores(tape, &pooling, out.p_star(), w, b)?;
        Ok(Some((y, kept)))
    }

    /// `L_pred + beta * L_con` on the chain's last snapshot; `None` when no
    /// candidate can be scored.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        out: &ChainOutput,
        candidates: &[Vec<NodeId>],
        labels: &[u8],
        beta: f64,
    ) -> Result<Option<Var>> {
        let Some((y, kept)) = self.score(tape, store, out, candidates)? else {
            return Ok(None);
        };
        let labels: Vec<u8> = kept.iter().map(|&i| labels[i]).collect();
        let pred = bce_loss(tape, y, &labels)?;
        let last = out.stacks.last();
        let con = match last.and_then(|s| s.q_structural.zip(s.q_temporal)) {
            Some((qs, qt)) => Some(contrastive_loss(tape, qs, qt)?),
            None => None,
        };
        Ok(Some(total_loss(tape, pred, con, beta)?))
    }
}

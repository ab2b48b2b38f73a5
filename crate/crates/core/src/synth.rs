//! Small synthetic dynamic hypergraphs with planted structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hypercore::{build_snapshot, DynamicHypergraph, HyperError, Hyperedge, NodeId, SnapshotSpec};

/// Time units per snapshot in generated datasets.
pub const SNAPSHOT_SPAN: i64 = 10;

fn ids(v: impl IntoIterator<Item = usize>) -> Vec<NodeId> {
    v.into_iter().map(|i| NodeId(i as u32)).collect()
}

fn assemble(per_snapshot: Vec<Vec<Vec<NodeId>>>, node_count: usize) -> Result<DynamicHypergraph, HyperError> {
    let mut snapshots = Vec::with_capacity(per_snapshot.len());
    for (s, groups) in per_snapshot.into_iter().enumerate() {
        let t0 = s as i64 * SNAPSHOT_SPAN;
        let edges = groups
            .into_iter()
            .enumerate()
            .map(|(j, g)| Hyperedge::new(g, t0 + (j as i64 % SNAPSHOT_SPAN)))
            .collect::<Result<Vec<_>, _>>()?;
        snapshots.push(build_snapshot(
            edges,
            SnapshotSpec {
                index: s,
                t_start: t0,
                t_end: t0 + SNAPSHOT_SPAN,
            },
        )?);
    }
    DynamicHypergraph::new(snapshots, node_count, (0..node_count as u64).collect())
}

/// The 6-node, 3-edge, 2-snapshot instance used for gradient checks.
pub fn toy_instance() -> DynamicHypergraph {
    let per = vec![vec![ids([0, 1, 2]), ids([1, 3])], vec![ids([3, 4, 5])]];
    assemble(per, 6).expect("toy instance is valid")
}

/// Fixed labelled candidates on the toy instance's second snapshot.
pub fn toy_candidates() -> (Vec<Vec<NodeId>>, Vec<u8>) {
    (
        vec![ids([3, 4, 5]), ids([0, 4, 5]), ids([1, 2, 4]), ids([0, 3])],
        vec![1, 0, 0, 0],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicConfig {
    pub snapshots: usize,
    pub period: usize,
    /// Tracked groups that re-appear whenever `s % period == 0`.
    pub tracked: usize,
    pub group_size: usize,
    pub noise_nodes: usize,
    /// Uniform random groups over the noise nodes in off-phase snapshots.
    pub noise_edges: usize,
    pub seed: u64,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        Self {
            snapshots: 12,
            period: 3,
            tracked: 30,
            group_size: 3,
            noise_nodes: 90,
            noise_edges: 30,
            seed: 0,
        }
    }
}

/// Tracked groups over nodes `0..tracked * group_size` form edges exactly in
/// the snapshots `s % period == 0`. In the other snapshots the noise nodes
/// form random groups. Nodes not in an edge of a snapshot appear there as
/// singletons, so every node is present in every snapshot and only the
/// timing tells the phases apart.
pub fn planted_periodic(cfg: &PeriodicConfig) -> Result<DynamicHypergraph, HyperError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.tracked * cfg.group_size;
    let n = a + cfg.noise_nodes;
    let tracked: Vec<Vec<NodeId>> = (0..cfg.tracked)
        .map(|g| ids(g * cfg.group_size..(g + 1) * cfg.group_size))
        .collect();
    let noise: Vec<usize> = (a..n).collect();
    let mut per = Vec::with_capacity(cfg.snapshots);
    for s in 0..cfg.snapshots {
        let mut groups: Vec<Vec<NodeId>> = Vec::new();
        if s % cfg.period == 0 {
            groups.extend(tracked.iter().cloned());
            groups.extend(noise.iter().map(|&i| ids([i])));
        } else {
            let mut covered = vec![false; n];
            for _ in 0..cfg.noise_edges {
                let g: Vec<usize> = noise.choose_multiple(&mut rng, cfg.group_size).copied().collect();
                for &i in &g {
                    covered[i] = true;
                }
                groups.push(ids(g));
            }
            groups.extend((0..n).filter(|&i| !covered[i]).map(|i| ids([i])));
        }
        per.push(groups);
    }
    assemble(per, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub snapshots: usize,
    pub nodes: usize,
    pub edges_per_snapshot: usize,
    pub group_size: usize,
    /// Probability that each member of a re-formed edge is swapped for a
    /// node of an overlapping edge.
    pub swap_prob: f64,
    /// Add every node not in an edge as a singleton, so inactive nodes are
    /// part of each snapshot.
    pub background_singletons: bool,
    pub seed: u64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            snapshots: 10,
            nodes: 150,
            edges_per_snapshot: 40,
            group_size: 3,
            swap_prob: 0.34,
            background_singletons: true,
            seed: 0,
        }
    }
}

/// Every edge of snapshot `s + 1` is a perturbation of an edge of snapshot
/// `s`: some members are swapped for members of edges that overlap it, so
/// future edges live near clusters of structurally similar past edges.
pub fn planted_similarity(cfg: &SimilarityConfig) -> Result<DynamicHypergraph, HyperError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<usize> = (0..cfg.nodes).collect();
    // seed clusters: overlapping groups inside small communities
    let community = cfg.group_size * 3;
    let mut current: Vec<Vec<usize>> = (0..cfg.edges_per_snapshot)
        .map(|j| {
            let base = (j * community) % cfg.nodes.saturating_sub(community).max(1);
            let pool: Vec<usize> = (base..base + community).collect();
            let mut g: Vec<usize> = pool.choose_multiple(&mut rng, cfg.group_size).copied().collect();
            g.sort_unstable();
            g
        })
        .collect();
    let mut per = Vec::with_capacity(cfg.snapshots);
    for _ in 0..cfg.snapshots {
        let mut groups: Vec<Vec<NodeId>> = current.iter().map(|g| ids(g.iter().copied())).collect();
        if cfg.background_singletons {
            let mut covered = vec![false; cfg.nodes];
            current.iter().flatten().for_each(|&i| covered[i] = true);
            groups.extend((0..cfg.nodes).filter(|&i| !covered[i]).map(|i| ids([i])));
        }
        per.push(groups);
        let next = current
            .iter()
            .map(|g| {
                let neighbours: Vec<usize> = current
                    .iter()
                    .filter(|h| *h != g && h.iter().any(|x| g.contains(x)))
                    .flatten()
                    .copied()
                    .filter(|x| !g.contains(x))
                    .collect();
                let mut out = g.clone();
                for slot in out.iter_mut() {
                    if rng.gen_bool(cfg.swap_prob) {
                        let pick = if neighbours.is_empty() {
                            *all.choose(&mut rng).expect("nodes")
                        } else {
                            *neighbours.choose(&mut rng).expect("non-empty")
                        };
                        *slot = pick;
                    }
                }
                out.sort_unstable();
                out.dedup();
                while out.len() < cfg.group_size.min(2) {
                    let x = *all.choose(&mut rng).expect("nodes");
                    if !out.contains(&x) {
                        out.push(x);
                    }
                }
                out.sort_unstable();
                out
            })
            .collect();
        current = next;
    }
    assemble(per, cfg.nodes)
}

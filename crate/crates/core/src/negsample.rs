//! Motif negative sampling: negatives are grown by unioning hyperedges that
//! overlap the set built so far, so they look like plausible groups.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hypercore::{NodeId, Snapshot};

/// Resamples allowed before a negative is declared impossible.
pub const MAX_RESAMPLES: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NegError {
    #[error("no negative of size {target} found after {MAX_RESAMPLES} attempts")]
    NoNegativeFound { target: usize },
    #[error("negative size must be at least 2, got {0}")]
    InvalidTargetSize(usize),
    #[error("negative ratio must be at least 1")]
    InvalidRatio,
}

pub type Result<T, E = NegError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct MnsSample {
    /// Sorted node set.
    pub nodes: Vec<NodeId>,
    /// Whether a random node had to be added because no overlapping
    /// hyperedge could extend the set.
    pub used_fallback: bool,
}

/// Per-snapshot lookup tables for repeated sampling.
#[derive(Debug, Clone)]
pub struct MnsSampler<'a> {
    snapshot: &'a Snapshot,
    node_edges: HashMap<NodeId, Vec<usize>>,
    positives: HashSet<Vec<NodeId>>,
}

impl<'a> MnsSampler<'a> {
    pub fn new(snapshot: &'a Snapshot) -> Self {
        let mut node_edges: HashMap<NodeId, Vec<usize>> = HashMap::new();
        for (j, e) in snapshot.edges().iter().enumerate() {
            for n in e.nodes() {
                node_edges.entry(*n).or_default().push(j);
            }
        }
        let positives = snapshot.edges().iter().map(|e| e.nodes().to_vec()).collect();
        Self {
            snapshot,
            node_edges,
            positives,
        }
    }

    pub fn snapshot(&self) -> &Snapshot {
        self.snapshot
    }

    /// True when `nodes` (sorted) is an edge of the snapshot.
    pub fn is_positive(&self, nodes: &[NodeId]) -> bool {
        self.positives.contains(nodes)
    }

    pub fn sample<R: Rng>(&self, target: usize, rng: &mut R) -> Result<MnsSample> {
        if target < 2 {
            return Err(NegError::InvalidTargetSize(target));
        }
        let edges = self.snapshot.edges();
        if edges.is_empty() {
            return Err(NegError::NoNegativeFound { target });
        }
        for _ in 0..MAX_RESAMPLES {
            if let Some(s) = self.grow(target, rng) {
                if !self.positives.contains(&s.nodes) {
                    return Ok(s);
                }
            }
        }
        Err(NegError::NoNegativeFound { target })
    }

    fn grow<R: Rng>(&self, target: usize, rng: &mut R) -> Option<MnsSample> {
        let edges = self.snapshot.edges();
        let mut set: BTreeSet<NodeId> = BTreeSet::new();
        let mut used_fallback = false;

        let add_novel = |set: &mut BTreeSet<NodeId>, nodes: &[NodeId], rng: &mut R| {
            let novel: Vec<NodeId> = nodes.iter().filter(|n| !set.contains(n)).copied().collect();
            let room = target - set.len();
            if novel.len() <= room {
                set.extend(novel);
            } else {
                set.extend(novel.choose_multiple(rng, room).copied());
            }
        };

        let start = &edges[rng.gen_range(0..edges.len())];
        add_novel(&mut set, start.nodes(), rng);
        while set.len() < target {
            let adjacent: BTreeSet<usize> = set
                .iter()
                .flat_map(|n| self.node_edges.get(n).into_iter().flatten().copied())
                .filter(|&j| edges[j].nodes().iter().any(|n| !set.contains(n)))
                .collect();
            if adjacent.is_empty() {
                let pool: Vec<NodeId> = self
                    .snapshot
                    .local_nodes()
                    .iter()
                    .filter(|n| !set.contains(n))
                    .copied()
                    .collect();
                let pick = *pool.choose(rng)?;
                set.insert(pick);
                used_fallback = true;
            } else {
                let adjacent: Vec<usize> = adjacent.into_iter().collect();
                let j = adjacent[rng.gen_range(0..adjacent.len())];
                add_novel(&mut set, edges[j].nodes(), rng);
            }
        }
        Some(MnsSample {
            nodes: set.into_iter().collect(),
            used_fallback,
        })
    }
}

/// One motif negative of exactly `target` nodes that is not an edge of the
/// snapshot.
pub fn mns_negative<R: Rng>(snapshot: &Snapshot, target: usize, rng: &mut R) -> Result<MnsSample> {
    MnsSampler::new(snapshot).sample(target, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SizePolicy {
    /// Each negative has its positive's size.
    #[default]
    MatchPositive,
    /// Every negative has this size.
    Fixed(usize),
}

/// Labelled candidates (global node ids) for one snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateBatch {
    pub snapshot: usize,
    pub candidates: Vec<Vec<NodeId>>,
    pub labels: Vec<u8>,
    /// Positives discarded (size below 2, or no negative could be found).
    pub dropped: usize,
    /// Negatives that needed the random-node fallback.
    pub fallback_count: usize,
}

impl CandidateBatch {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Audit dump: `snapshot,label,node_ids...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (c, y) in self.candidates.iter().zip(&self.labels) {
            let _ = write!(out, "{},{}", self.snapshot, y);
            for n in c {
                let _ = write!(out, ",{}", n.0);
            }
            out.push('\n');
        }
        out
    }
}

/// Pairs each positive (label 1) with `ratio` motif negatives (label 0),
/// then shuffles. Positives smaller than 2 and positives without enough
/// negatives are dropped and counted.
pub fn make_candidate_batch<R: Rng>(
    sampler: &MnsSampler<'_>,
    positives: &[Vec<NodeId>],
    ratio: usize,
    size_policy: SizePolicy,
    rng: &mut R,
) -> Result<CandidateBatch> {
    if ratio < 1 {
        return Err(NegError::InvalidRatio);
    }
    let mut batch = CandidateBatch {
        snapshot: sampler.snapshot().spec().index,
        ..CandidateBatch::default()
    };
    let mut items: Vec<(Vec<NodeId>, u8)> = Vec::new();
    'positive: for pos in positives {
        if pos.len() < 2 {
            batch.dropped += 1;
            continue;
        }
        let size = match size_policy {
            SizePolicy::MatchPositive => pos.len(),
            SizePolicy::Fixed(n) => n,
        };
        let mut negs = Vec::with_capacity(ratio);
        let mut fallbacks = 0;
        for _ in 0..ratio {
            match sampler.sample(size, rng) {
                Ok(s) => {
                    fallbacks += usize::from(s.used_fallback);
                    negs.push(s.nodes);
                }
                Err(NegError::NoNegativeFound { .. }) => {
                    batch.dropped += 1;
                    continue 'positive;
                }
                Err(e) => return Err(e),
            }
        }
        batch.fallback_count += fallbacks;
        items.push((pos.clone(), 1));
        items.extend(negs.into_iter().map(|n| (n, 0)));
    }
    items.shuffle(rng);
    for (c, y) in items {
        batch.candidates.push(c);
        batch.labels.push(y);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercore::{build_snapshot, Hyperedge, SnapshotSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snap(edges: &[&[u32]]) -> Snapshot {
        let edges = edges
            .iter()
            .map(|e| Hyperedge::new(e.iter().copied().map(NodeId).collect(), 0).unwrap())
            .collect();
        build_snapshot(
            edges,
            SnapshotSpec {
                index: 3,
                t_start: 0,
                t_end: 1,
            },
        )
        .unwrap()
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn only_reachable_triple() {
        let s = snap(&[&[1, 2], &[2, 3]]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = mns_negative(&s, 3, &mut rng).unwrap();
            assert_eq!(n.nodes, ids(&[1, 2, 3]));
            assert!(!n.used_fallback);
        }
    }

    #[test]
    fn lone_pair_has_no_negative() {
        let s = snap(&[&[1, 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            mns_negative(&s, 2, &mut rng),
            Err(NegError::NoNegativeFound { target: 2 })
        );
    }

    #[test]
    fn pairs_avoid_positive_sets() {
        let s = snap(&[&[1, 2, 3], &[3, 4]]);
        // Reachable: 2-subsets of {1,2,3}; {3,4} is a positive.
        let reachable = [ids(&[1, 2]), ids(&[1, 3]), ids(&[2, 3])];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = mns_negative(&s, 2, &mut rng).unwrap();
            assert!(reachable.contains(&n.nodes), "{:?}", n.nodes);
        }
    }

    #[test]
    fn target_below_two_is_rejected() {
        let s = snap(&[&[1, 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mns_negative(&s, 1, &mut rng), Err(NegError::InvalidTargetSize(1)));
    }

    #[test]
    fn batch_counts() {
        let s = snap(&[&[1, 2], &[2, 3], &[4, 5, 6]]);
        let sampler = MnsSampler::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_candidate_batch(
            &sampler,
            &[ids(&[1, 2]), ids(&[4, 5, 6])],
            1,
            SizePolicy::MatchPositive,
            &mut rng,
        )
        .unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.positives(), 2);
        assert_eq!(b.snapshot, 3);
    }

    #[test]
    fn singleton_positives_are_dropped() {
        let s = snap(&[&[1], &[2], &[1, 2, 3]]);
        let sampler = MnsSampler::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_candidate_batch(
            &sampler,
            &[ids(&[1]), ids(&[2])],
            1,
            SizePolicy::MatchPositive,
            &mut rng,
        )
        .unwrap();
        assert!(b.is_empty());
        assert_eq!(b.dropped, 2);
    }

    #[test]
    fn seeded_batches_repeat() {
        let s = snap(&[&[1, 2, 3], &[3, 4], &[4, 5, 6, 7], &[7, 8]]);
        let sampler = MnsSampler::new(&s);
        let positives: Vec<_> = s.edges().iter().map(|e| e.nodes().to_vec()).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_candidate_batch(&sampler, &positives, 2, SizePolicy::MatchPositive, &mut rng).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_eq!(run(11).to_csv(), run(11).to_csv());
    }
}

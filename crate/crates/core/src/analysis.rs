//! Descriptive statistics over a dynamic hypergraph: how node overlap
//! between hyperedges relates to the gap between their formation times, and
//! how often sampled relations re-appear in later snapshots.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hypercore::{DynamicHypergraph, Hyperedge, NodeId};

pub const DEFAULT_SAMPLE_SIZE: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("sampling window holds no hyperedge of size >= 2")]
    WindowEmpty,
    #[error("sample size must be at least 2, got {0}")]
    InvalidSampleSize(usize),
    #[error("need at least 2 snapshots, got {0}")]
    TooFewSnapshots(usize),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// How pairs are keyed into overlap buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Raw intersection size.
    #[default]
    Count,
    /// Jaccard similarity floored to tenths; `1.0` is its own bucket.
    Jaccard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGapRow {
    pub overlap_bucket: f64,
    pub mean_abs_time_gap: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReappearanceRow {
    pub snapshot: usize,
    pub reappearance_rate: f64,
}

/// Which snapshots relations are sampled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub sample_size: usize,
    /// Number of leading snapshots; `None` takes the first 20% (at least one).
    pub window: Option<usize>,
    pub mode: OverlapMode,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            sample_size: DEFAULT_SAMPLE_SIZE,
            window: None,
            mode: OverlapMode::Count,
        }
    }
}

impl SampleOptions {
    pub fn window_len(&self, snapshots: usize) -> usize {
        self.window.unwrap_or_else(|| (snapshots / 5).max(1)).min(snapshots)
    }
}

/// Uniform sample (without replacement) of the non-singleton hyperedges in
/// the window, returned as `(snapshot, edge)` in dataset order.
fn sample_window<'a, R: Rng>(
    graph: &'a DynamicHypergraph,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<Vec<(usize, &'a Hyperedge)>> {
    if opts.sample_size < 2 {
        return Err(AnalysisError::InvalidSampleSize(opts.sample_size));
    }
    let window = opts.window_len(graph.snapshots().len());
    let pool: Vec<(usize, &Hyperedge)> = graph.snapshots()[..window]
        .iter()
        .enumerate()
        .flat_map(|(s, snap)| snap.edges().iter().map(move |e| (s, e)))
        .filter(|(_, e)| e.len() >= 2)
        .collect();
    if pool.is_empty() {
        return Err(AnalysisError::WindowEmpty);
    }
    let mut picked = sample(rng, pool.len(), opts.sample_size.min(pool.len())).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

fn intersection(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Mean formation-time gap per overlap bucket over every sampled pair that
/// shares a snapshot and at least one node. Rows are sorted by bucket.
pub fn overlap_vs_time_gap<R: Rng>(
    graph: &DynamicHypergraph,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<Vec<OverlapGapRow>> {
    let sampled = sample_window(graph, opts, rng)?;
    // bucket key in tenths (Jaccard) or raw counts, kept integral for exact grouping
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (i, (si, ei)) in sampled.iter().enumerate() {
        for (sj, ej) in &sampled[i + 1..] {
            if si != sj {
                continue;
            }
            let common = intersection(ei.nodes(), ej.nodes());
            if common == 0 {
                continue;
            }
            let key = match opts.mode {
                OverlapMode::Count => common,
                OverlapMode::Jaccard => {
                    let union = ei.len() + ej.len() - common;
                    common * 10 / union
                }
            };
            let gap = (ei.timestamp() - ej.timestamp()).unsigned_abs() as f64;
            let slot = acc.entry(key).or_insert((0.0, 0));
            slot.0 += gap;
            slot.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(key, (sum, count))| OverlapGapRow {
            overlap_bucket: match opts.mode {
                OverlapMode::Count => key as f64,
                OverlapMode::Jaccard => key as f64 / 10.0,
            },
            mean_abs_time_gap: sum / count as f64,
            pair_count: count,
        })
        .collect())
}

/// For every snapshot after the window, the fraction of sampled relations
/// whose exact node set occurs as a hyperedge there.
pub fn reappearance_rate<R: Rng>(
    graph: &DynamicHypergraph,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<Vec<ReappearanceRow>> {
    let total = graph.snapshots().len();
    if total < 2 {
        return Err(AnalysisError::TooFewSnapshots(total));
    }
    let sampled = sample_window(graph, opts, rng)?;
    let window = opts.window_len(total);
    Ok(graph.snapshots()[window..]
        .iter()
        .enumerate()
        .map(|(offset, snap)| {
            let present: HashSet<&[NodeId]> = snap.edges().iter().map(|e| e.nodes()).collect();
            let hits = sampled.iter().filter(|(_, e)| present.contains(e.nodes())).count();
            ReappearanceRow {
                snapshot: window + offset,
                reappearance_rate: hits as f64 / sampled.len() as f64,
            }
        })
        .collect())
}

/// `overlap,mean_gap,count`
pub fn overlap_csv(rows: &[OverlapGapRow]) -> String {
    let mut out = String::from("overlap,mean_gap,count\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.overlap_bucket, r.mean_abs_time_gap, r.pair_count);
    }
    out
}

/// `snapshot,rate`
pub fn reappearance_csv(rows: &[ReappearanceRow]) -> String {
    let mut out = String::from("snapshot,rate\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.snapshot, r.reappearance_rate);
    }
    out
}

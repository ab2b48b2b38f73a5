//! Dynamic hypergraph data model: hyperedges over a global node universe,
//! grouped into time-ordered snapshots with sparse incidence matrices.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::diffcore::SparseMatrix;

#[derive(Debug, thiserror::Error)]
pub enum HyperError {
    #[error("length mismatch in {stream} stream: {detail}")]
    LengthMismatch { stream: &'static str, detail: String },
    #[error("simplex {index} in nverts stream has zero vertices")]
    ZeroSizeSimplex { index: usize },
    #[error("non-integer token `{token}` at line {line} of {stream} stream")]
    NonIntegerToken {
        stream: &'static str,
        line: usize,
        token: String,
    },
    #[error("negative timestamp {0}")]
    NegativeTimestamp(i64),
    #[error("hyperedge has no nodes")]
    EmptyHyperedge,
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("invalid snapshot count {t} for {edges} edges")]
    InvalidT { t: usize, edges: usize },
    #[error("timestamp {ts} outside snapshot interval [{start}, {end})")]
    TimestampOutOfRange { ts: i64, start: i64, end: i64 },
    #[error("invalid snapshot interval [{0}, {1})")]
    InvalidInterval(i64, i64),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HyperError> = std::result::Result<T, E>;

/// Dense node index, stable across every snapshot of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A timestamped node set. Nodes are sorted and distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hyperedge {
    nodes: Vec<NodeId>,
    timestamp: i64,
}

impl Hyperedge {
    /// Sorts and deduplicates `nodes`.
    pub fn new(mut nodes: Vec<NodeId>, timestamp: i64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(HyperError::EmptyHyperedge);
        }
        if timestamp < 0 {
            return Err(HyperError::NegativeTimestamp(timestamp));
        }
        nodes.sort_unstable();
        nodes.dedup();
        Ok(Self { nodes, timestamp })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSpec {
    pub index: usize,
    pub t_start: i64,
    pub t_end: i64,
}

impl SnapshotSpec {
    pub fn duration(&self) -> i64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.t_start && ts < self.t_end
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    spec: SnapshotSpec,
    edges: Vec<Hyperedge>,
    local_nodes: Vec<NodeId>,
    local_index: HashMap<NodeId, usize>,
    incidence: SparseMatrix,
    node_degree: Vec<usize>,
    edge_degree: Vec<usize>,
}

/// Builds a snapshot's incidence matrix (local node x edge) and degrees.
pub fn build_snapshot(edges: Vec<Hyperedge>, spec: SnapshotSpec) -> Result<Snapshot> {
    if spec.t_start >= spec.t_end {
        return Err(HyperError::InvalidInterval(spec.t_start, spec.t_end));
    }
    if let Some(e) = edges.iter().find(|e| !spec.contains(e.timestamp)) {
        return Err(HyperError::TimestampOutOfRange {
            ts: e.timestamp,
            start: spec.t_start,
            end: spec.t_end,
        });
    }
    let mut local_nodes: Vec<NodeId> = edges.iter().flat_map(|e| e.nodes.iter().copied()).collect();
    local_nodes.sort_unstable();
    local_nodes.dedup();
    let local_index: HashMap<NodeId, usize> = local_nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    let mut entries = Vec::new();
    let mut node_degree = vec![0; local_nodes.len()];
    let mut edge_degree = Vec::with_capacity(edges.len());
    for (j, e) in edges.iter().enumerate() {
        for n in &e.nodes {
            let i = local_index[n];
            entries.push((i, j, 1.0));
            node_degree[i] += 1;
        }
        edge_degree.push(e.len());
    }
    let incidence =
        SparseMatrix::new(local_nodes.len(), edges.len(), entries).expect("incidence entries are unique and in range");
    Ok(Snapshot {
        spec,
        edges,
        local_nodes,
        local_index,
        incidence,
        node_degree,
        edge_degree,
    })
}

impl Snapshot {
    pub fn spec(&self) -> &SnapshotSpec {
        &self.spec
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    /// Sorted global ids of the nodes that occur in this snapshot.
    pub fn local_nodes(&self) -> &[NodeId] {
        &self.local_nodes
    }

    pub fn local_index(&self, node: NodeId) -> Option<usize> {
        self.local_index.get(&node).copied()
    }

    /// Binary `|V_t| x |E_t|` incidence matrix.
    pub fn incidence(&self) -> &SparseMatrix {
        &self.incidence
    }

    pub fn node_degrees(&self) -> &[usize] {
        &self.node_degree
    }

    pub fn edge_degrees(&self) -> &[usize] {
        &self.edge_degree
    }

    pub fn num_nodes(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Ordered snapshots over a shared node universe.
#[derive(Debug, Clone)]
pub struct DynamicHypergraph {
    snapshots: Vec<Snapshot>,
    node_count: usize,
    id_map: Vec<u64>,
}

impl DynamicHypergraph {
    pub fn new(snapshots: Vec<Snapshot>, node_count: usize, id_map: Vec<u64>) -> Result<Self> {
        if !id_map.is_empty() && id_map.len() != node_count {
            return Err(HyperError::InvalidDataset(format!(
                "id_map has {} entries for {node_count} nodes",
                id_map.len()
            )));
        }
        for w in snapshots.windows(2) {
            if w[0].spec.t_end > w[1].spec.t_start {
                return Err(HyperError::InvalidDataset(format!(
                    "snapshots {} and {} overlap or are out of order",
                    w[0].spec.index, w[1].spec.index
                )));
            }
        }
        for (i, s) in snapshots.iter().enumerate() {
            if s.spec.index != i {
                return Err(HyperError::InvalidDataset(format!(
                    "snapshot at position {i} carries index {}",
                    s.spec.index
                )));
            }
            if let Some(n) = s.local_nodes.last() {
                if n.index() >= node_count {
                    return Err(HyperError::InvalidDataset(format!(
                        "node {} out of range for {node_count} nodes",
                        n.0
                    )));
                }
            }
        }
        Ok(Self {
            snapshots,
            node_count,
            id_map,
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Raw dataset id of each dense node id.
    pub fn id_map(&self) -> &[u64] {
        &self.id_map
    }

    pub fn num_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.num_edges()).sum()
    }

    /// All hyperedges in snapshot order.
    pub fn all_edges(&self) -> Vec<Hyperedge> {
        self.snapshots.iter().flat_map(|s| s.edges.iter().cloned()).collect()
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            node_count: self.node_count,
            id_map: self.id_map.clone(),
            snapshots: self
                .snapshots
                .iter()
                .map(|s| SnapshotFile {
                    t_start: s.spec.t_start,
                    t_end: s.spec.t_end,
                    edges: s
                        .edges
                        .iter()
                        .map(|e| (e.nodes.iter().map(|n| n.0).collect(), e.timestamp))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        let mut snapshots = Vec::with_capacity(file.snapshots.len());
        for (index, s) in file.snapshots.into_iter().enumerate() {
            let mut edges = Vec::with_capacity(s.edges.len());
            for (ids, ts) in s.edges {
                let before = ids.len();
                let e = Hyperedge::new(ids.into_iter().map(NodeId).collect(), ts)?;
                if e.len() != before {
                    return Err(HyperError::InvalidDataset(
                        "edge node list is not duplicate-free".into(),
                    ));
                }
                edges.push(e);
            }
            let spec = SnapshotSpec {
                index,
                t_start: s.t_start,
                t_end: s.t_end,
            };
            snapshots.push(build_snapshot(edges, spec)?);
        }
        Self::new(snapshots, file.node_count, file.id_map)
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer(w, &self.to_file())?;
        Ok(())
    }

    pub fn read_json(r: impl Read) -> Result<Self> {
        let file: DatasetFile = serde_json::from_reader(r)?;
        Self::from_file(file)
    }
}

/// On-disk dataset document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub node_count: usize,
    pub id_map: Vec<u64>,
    pub snapshots: Vec<SnapshotFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub t_start: i64,
    pub t_end: i64,
    pub edges: Vec<(Vec<u32>, i64)>,
}

/// Hyperedges with dense ids plus the raw id of each dense id.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEdges {
    pub edges: Vec<Hyperedge>,
    pub id_map: Vec<u64>,
}

fn read_integers<T: std::str::FromStr>(stream: &'static str, r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v = tok.parse::<T>().map_err(|_| HyperError::NonIntegerToken {
            stream,
            line: i + 1,
            token: tok.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Reads the three-stream simplex format (`nverts`, `simplices`, `times`,
/// one integer per line). Raw vertex ids are remapped densely in order of
/// first appearance.
pub fn parse_simplex_dataset(
    nverts: impl BufRead,
    simplices: impl BufRead,
    times: impl BufRead,
) -> Result<ParsedEdges> {
    let nverts: Vec<usize> = read_integers("nverts", nverts)?;
    let simplices: Vec<u64> = read_integers("simplices", simplices)?;
    let times: Vec<i64> = read_integers("times", times)?;

    if nverts.len() != times.len() {
        return Err(HyperError::LengthMismatch {
            stream: "times",
            detail: format!("{} timestamps for {} simplices", times.len(), nverts.len()),
        });
    }
    if let Some(index) = nverts.iter().position(|&n| n == 0) {
        return Err(HyperError::ZeroSizeSimplex { index });
    }
    let total: usize = nverts.iter().sum();
    if total != simplices.len() {
        return Err(HyperError::LengthMismatch {
            stream: "simplices",
            detail: format!("{} vertex entries but nverts sums to {total}", simplices.len()),
        });
    }

    let mut dense: HashMap<u64, NodeId> = HashMap::new();
    let mut id_map = Vec::new();
    let mut edges = Vec::with_capacity(nverts.len());
    let mut cursor = 0;
    for (&n, &ts) in nverts.iter().zip(&times) {
        let nodes = simplices[cursor..cursor + n]
            .iter()
            .map(|raw| {
                *dense.entry(*raw).or_insert_with(|| {
                    id_map.push(*raw);
                    NodeId((id_map.len() - 1) as u32)
                })
            })
            .collect();
        cursor += n;
        edges.push(Hyperedge::new(nodes, ts)?);
    }
    Ok(ParsedEdges { edges, id_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "snapshots")]
pub enum PartitionPolicy {
    /// Consecutive runs of `ceil(|E| / T)` edges in time order.
    EqualCount(usize),
    /// `T` equal half-open intervals over `[min_ts, max_ts + 1)`.
    EqualDuration(usize),
}

impl PartitionPolicy {
    pub fn snapshots(&self) -> usize {
        match *self {
            Self::EqualCount(t) | Self::EqualDuration(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Partitioned {
    pub graph: DynamicHypergraph,
    /// Intervals that received no edge and were dropped.
    pub dropped_empty: usize,
}

/// Groups edges into snapshots. Edges are stably sorted by timestamp first.
///
/// With `EqualCount`, a chunk boundary never splits equal timestamps: the
/// boundary moves forward past the tie so intervals stay disjoint.
pub fn partition_into_snapshots(
    edges: Vec<Hyperedge>,
    id_map: Vec<u64>,
    policy: PartitionPolicy,
) -> Result<Partitioned> {
    if edges.is_empty() {
        return Err(HyperError::EmptyEdgeList);
    }
    let t = policy.snapshots();
    if t < 1 || (matches!(policy, PartitionPolicy::EqualCount(_)) && t > edges.len()) {
        return Err(HyperError::InvalidT { t, edges: edges.len() });
    }
    let node_count = if id_map.is_empty() {
        edges
            .iter()
            .flat_map(|e| e.nodes.iter())
            .map(|n| n.index() + 1)
            .max()
            .unwrap_or(0)
    } else {
        id_map.len()
    };
    let mut edges = edges;
    edges.sort_by_key(|e| e.timestamp);
    let n = edges.len();
    let max_ts = edges[n - 1].timestamp;

    // (t_start, t_end, edge range)
    let mut groups: Vec<(i64, i64, std::ops::Range<usize>)> = Vec::new();
    let mut dropped = 0;
    match policy {
        PartitionPolicy::EqualCount(t) => {
            let chunk = n.div_ceil(t);
            let mut starts = Vec::with_capacity(t);
            for k in 0..t {
                let mut b = (k * chunk).min(n);
                while b > 0 && b < n && edges[b - 1].timestamp == edges[b].timestamp {
                    b += 1;
                }
                starts.push(b);
            }
            starts.push(n);
            for k in 0..t {
                let (lo, hi) = (starts[k], starts[k + 1].max(starts[k]));
                if lo >= hi {
                    dropped += 1;
                    continue;
                }
                let t_start = edges[lo].timestamp;
                let t_end = if hi < n { edges[hi].timestamp } else { max_ts + 1 };
                groups.push((t_start, t_end, lo..hi));
            }
        }
        PartitionPolicy::EqualDuration(t) => {
            let min_ts = edges[0].timestamp;
            let span = (max_ts + 1 - min_ts) as i128;
            let bound = |k: usize| min_ts + ((span * k as i128) / t as i128) as i64;
            let mut lo = 0;
            for k in 0..t {
                let (start, end) = (bound(k), bound(k + 1));
                let mut hi = lo;
                while hi < n && edges[hi].timestamp < end {
                    hi += 1;
                }
                if hi == lo {
                    dropped += 1;
                } else {
                    groups.push((start, end, lo..hi));
                }
                lo = hi;
            }
        }
    }
    if dropped > 0 {
        log::warn!("partition dropped {dropped} empty snapshot interval(s)");
    }

    let mut snapshots = Vec::with_capacity(groups.len());
    for (index, (t_start, t_end, range)) in groups.into_iter().enumerate() {
        let spec = SnapshotSpec { index, t_start, t_end };
        snapshots.push(build_snapshot(edges[range].to_vec(), spec)?);
    }
    Ok(Partitioned {
        graph: DynamicHypergraph::new(snapshots, node_count, id_map)?,
        dropped_empty: dropped,
    })
}

//! Multivariate de Bruijn graph construction.
//!
//! One weighted directed de Bruijn layer per dimension — nodes are
//! dimension-tagged (k−1)-symbol-tuples, edges are observed k-tuples with
//! occurrence-count weights — plus undirected cross-dimension hyper-tuple
//! edges linking the D nodes that co-occur at each time step into a clique
//! (the prefix clique once at t = 0, then a suffix clique at every step).
//! Every node also owns a feature multiset of the raw (k−1)-slices that
//! discretize to it, counted once per window position.
//!
//! Construction is a single O(D²·S) sweep; the result is immutable and all
//! node ids are frozen in first-encounter order, so identical inputs always
//! produce identical graphs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::DiscreteDataset;
use crate::ingest::TimeSeriesDataset;

/// Errors raised during graph construction and lookup.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k-tuple order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("series of length {len} is shorter than order {k}")]
    SeriesTooShort { len: usize, k: usize },
    #[error("raw and discrete datasets disagree: {0}")]
    ShapeMismatch(String),
    #[error("malformed node key: {0}")]
    MalformedKey(String),
    #[error("invalid graph structure: {0}")]
    InvalidStructure(String),
}

pub type GraphResult<T> = Result<T, GraphError>;

/// Dense node identifier, assigned in first-encounter order during build.
pub type NodeId = u32;

/// A node: a (k−1)-symbol-tuple tagged with its dimension (1-based).
/// Nodes from different dimensions are distinct even with equal symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub dim: u16,
    pub symbols: Vec<u16>,
}

impl NodeKey {
    pub fn new(dim: u16, symbols: Vec<u16>) -> Self {
        Self { dim, symbols }
    }

    /// Symbols joined by `|`, the form used in serialized artifacts.
    pub fn symbols_string(&self) -> String {
        let parts: Vec<String> = self.symbols.iter().map(u16::to_string).collect();
        parts.join("|")
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}:({})", self.dim, self.symbols_string())
    }
}

/// A raw (k−1)-slice with a total order (lexicographic `total_cmp`), so it
/// can key ordered multisets deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawTuple(pub Vec<f64>);

impl PartialEq for RawTuple {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RawTuple {}

impl PartialOrd for RawTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RawTuple {
    fn cmp(&self, other: &Self) -> Ordering {
        let by_len = self.0.len().cmp(&other.0.len());
        if by_len != Ordering::Equal {
            return by_len;
        }
        for (a, b) in self.0.iter().zip(&other.0) {
            let ord = a.total_cmp(b);
            if ord != Ordering::Equal {
                return ord;
            }
        }
        Ordering::Equal
    }
}

/// How repeated co-occurrence of the same cross-dimension pair accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperWeighting {
    /// Weight = number of time steps the pair co-occurs (the default; keeps
    /// the most information and degrades gracefully to the binary reading).
    #[default]
    Count,
    /// Every hyper edge has weight 1 regardless of repetition.
    Binary,
}

/// Construction knobs beyond the required (raw, disc, k) inputs.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub hyper_weighting: HyperWeighting,
    /// Maximum distinct raw tuples kept per node feature multiset; `None`
    /// keeps everything. When the cap is hit, new distinct tuples are
    /// dropped but already-present tuples keep counting.
    pub feature_cap: Option<usize>,
}

/// Per-dimension tallies inside [`GraphStats`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimStats {
    pub dim: u16,
    pub nodes: usize,
    pub seq_edges: usize,
    pub seq_weight: u64,
}

/// Size report for a built graph, exposing both hyper-edge counting
/// conventions (undirected pairs, and their directed equivalent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    /// Distinct directed sequential edges across all dimensions.
    pub seq_edges: usize,
    /// Distinct undirected cross-dimension pairs.
    pub hyper_edges_undirected: usize,
    /// The same pairs counted once per direction.
    pub hyper_edges_directed: usize,
    /// seq_edges + hyper_edges_directed.
    pub edges_with_hyper_directed: usize,
    /// seq_edges + hyper_edges_undirected.
    pub edges_with_hyper_undirected: usize,
    pub per_dim: Vec<DimStats>,
    pub k: usize,
    pub series_len: usize,
}

/// An immutable multivariate de Bruijn graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdbg {
    k: usize,
    alphabet_sizes: Vec<u16>,
    series_len: usize,
    /// id → key; the id space is dense and frozen in first-encounter order.
    keys: Vec<NodeKey>,
    index: HashMap<NodeKey, NodeId>,
    /// Outgoing sequential edges per node, ordered by target id.
    seq_out: Vec<BTreeMap<NodeId, u64>>,
    /// Undirected hyper edges, keyed by (smaller id, larger id).
    hyper: BTreeMap<(NodeId, NodeId), u64>,
    /// Feature multiset per node: raw slice → occurrence count.
    features: Vec<BTreeMap<RawTuple, u64>>,
    /// Node ids per dimension (0-based index = dim − 1), in id order.
    dim_nodes: Vec<Vec<NodeId>>,
}

impl Mdbg {
    /// Builds the graph with default options. See [`build_with`].
    pub fn build(
        raw: &TimeSeriesDataset,
        disc: &DiscreteDataset,
        k: usize,
    ) -> GraphResult<Mdbg> {
        Self::build_with(raw, disc, k, &BuildOptions::default())
    }

    /// Builds the multivariate de Bruijn graph from an aligned raw/discrete
    /// pair.
    ///
    /// For every t in [0, S−k] and every dimension: the prefix node (symbols
    /// t..t+k−1) and suffix node (t+1..t+k) are created or found and the
    /// sequential edge between them gains weight 1. Feature multisets record
    /// each raw (k−1)-slice once per window position (the prefix slice at
    /// t = 0, then every suffix slice), so a node's total count equals the
    /// number of positions it occurs at. Cross-dimension hyper cliques
    /// mirror the same schedule: the prefix clique once at t = 0, a suffix
    /// clique at every t.
    pub fn build_with(
        raw: &TimeSeriesDataset,
        disc: &DiscreteDataset,
        k: usize,
        opts: &BuildOptions,
    ) -> GraphResult<Mdbg> {
        if k < 2 {
            return Err(GraphError::OrderTooSmall(k));
        }
        let dims = raw.dims();
        let s = raw.len();
        if disc.dims() != dims {
            return Err(GraphError::ShapeMismatch(format!(
                "raw has {} dimensions, discrete has {}",
                dims,
                disc.dims()
            )));
        }
        if disc.len() != s {
            return Err(GraphError::ShapeMismatch(format!(
                "raw has {} steps, discrete has {}",
                s,
                disc.len()
            )));
        }
        if s < k {
            return Err(GraphError::SeriesTooShort { len: s, k });
        }

        let mut g = Mdbg {
            k,
            alphabet_sizes: disc.alphabet_sizes.clone(),
            series_len: s,
            keys: Vec::new(),
            index: HashMap::new(),
            seq_out: Vec::new(),
            hyper: BTreeMap::new(),
            features: Vec::new(),
            dim_nodes: vec![Vec::new(); dims],
        };

        let mut prefix_ids = vec![0 as NodeId; dims];
        let mut suffix_ids = vec![0 as NodeId; dims];
        for t in 0..=s - k {
            for i in 0..dims {
                let symbols = &disc.symbols[i];
                let u = g.intern(NodeKey::new(i as u16 + 1, symbols[t..t + k - 1].to_vec()));
                let v = g.intern(NodeKey::new(i as u16 + 1, symbols[t + 1..t + k].to_vec()));
                if t == 0 {
                    g.add_feature(u, &raw.values[i][t..t + k - 1], opts.feature_cap);
                }
                g.add_feature(v, &raw.values[i][t + 1..t + k], opts.feature_cap);
                *g.seq_out[u as usize].entry(v).or_insert(0) += 1;
                prefix_ids[i] = u;
                suffix_ids[i] = v;
            }
            if t == 0 {
                g.add_clique(&prefix_ids, opts.hyper_weighting);
            }
            g.add_clique(&suffix_ids, opts.hyper_weighting);
        }
        Ok(g)
    }

    fn intern(&mut self, key: NodeKey) -> NodeId {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.keys.len() as NodeId;
        self.dim_nodes[key.dim as usize - 1].push(id);
        self.keys.push(key.clone());
        self.index.insert(key, id);
        self.seq_out.push(BTreeMap::new());
        self.features.push(BTreeMap::new());
        id
    }

    fn add_feature(&mut self, node: NodeId, slice: &[f64], cap: Option<usize>) {
        let set = &mut self.features[node as usize];
        let tuple = RawTuple(slice.to_vec());
        if let Some(count) = set.get_mut(&tuple) {
            *count += 1;
            return;
        }
        if cap.is_some_and(|c| set.len() >= c) {
            return;
        }
        set.insert(tuple, 1);
    }

    fn add_clique(&mut self, ids: &[NodeId], weighting: HyperWeighting) {
        for (a, &x) in ids.iter().enumerate() {
            for &y in &ids[a + 1..] {
                let pair = (x.min(y), x.max(y));
                match weighting {
                    HyperWeighting::Count => {
                        *self.hyper.entry(pair).or_insert(0) += 1;
                    }
                    HyperWeighting::Binary => {
                        self.hyper.entry(pair).or_insert(1);
                    }
                }
            }
        }
    }

    /// Reassembles a graph from its serialized parts, re-validating every
    /// structural invariant (used by archive loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k: usize,
        alphabet_sizes: Vec<u16>,
        series_len: usize,
        keys: Vec<NodeKey>,
        seq: Vec<(NodeId, NodeId, u64)>,
        hyper: Vec<(NodeId, NodeId, u64)>,
        features: Vec<(NodeId, RawTuple, u64)>,
    ) -> GraphResult<Mdbg> {
        if k < 2 {
            return Err(GraphError::OrderTooSmall(k));
        }
        let dims = alphabet_sizes.len();
        let n = keys.len();
        let mut index = HashMap::with_capacity(n);
        let mut dim_nodes = vec![Vec::new(); dims];
        for (id, key) in keys.iter().enumerate() {
            if key.symbols.len() != k - 1 {
                return Err(GraphError::MalformedKey(format!(
                    "node {id}: tuple length {} != k-1 = {}",
                    key.symbols.len(),
                    k - 1
                )));
            }
            if key.dim == 0 || key.dim as usize > dims {
                return Err(GraphError::MalformedKey(format!(
                    "node {id}: dimension {} outside 1..={dims}",
                    key.dim
                )));
            }
            let alpha = alphabet_sizes[key.dim as usize - 1];
            if key.symbols.iter().any(|&s| s == 0 || s > alpha) {
                return Err(GraphError::MalformedKey(format!(
                    "node {id}: symbol outside 1..={alpha}"
                )));
            }
            if index.insert(key.clone(), id as NodeId).is_some() {
                return Err(GraphError::InvalidStructure(format!(
                    "duplicate node key {key}"
                )));
            }
            dim_nodes[key.dim as usize - 1].push(id as NodeId);
        }

        let mut seq_out = vec![BTreeMap::new(); n];
        for (src, dst, w) in seq {
            let (s_key, d_key) = match (keys.get(src as usize), keys.get(dst as usize)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(GraphError::InvalidStructure(format!(
                        "sequential edge ({src},{dst}) references a missing node"
                    )))
                }
            };
            if s_key.dim != d_key.dim {
                return Err(GraphError::InvalidStructure(format!(
                    "sequential edge {s_key} -> {d_key} crosses dimensions"
                )));
            }
            if s_key.symbols[1..] != d_key.symbols[..k - 2] {
                return Err(GraphError::InvalidStructure(format!(
                    "sequential edge {s_key} -> {d_key} violates the (k-2)-overlap"
                )));
            }
            if w == 0 {
                return Err(GraphError::InvalidStructure(format!(
                    "sequential edge {s_key} -> {d_key} has zero weight"
                )));
            }
            if seq_out[src as usize].insert(dst, w).is_some() {
                return Err(GraphError::InvalidStructure(format!(
                    "duplicate sequential edge {s_key} -> {d_key}"
                )));
            }
        }

        let mut hyper_map = BTreeMap::new();
        for (a, b, w) in hyper {
            let (a_key, b_key) = match (keys.get(a as usize), keys.get(b as usize)) {
                (Some(x), Some(y)) => (x, y),
                _ => {
                    return Err(GraphError::InvalidStructure(format!(
                        "hyper edge ({a},{b}) references a missing node"
                    )))
                }
            };
            if a_key.dim == b_key.dim {
                return Err(GraphError::InvalidStructure(format!(
                    "hyper edge {a_key} <-> {b_key} stays inside one dimension"
                )));
            }
            if a >= b {
                return Err(GraphError::InvalidStructure(format!(
                    "hyper edge ({a},{b}) is not in canonical (smaller, larger) order"
                )));
            }
            if w == 0 || hyper_map.insert((a, b), w).is_some() {
                return Err(GraphError::InvalidStructure(format!(
                    "hyper edge {a_key} <-> {b_key} duplicated or zero-weight"
                )));
            }
        }

        let mut feature_sets: Vec<BTreeMap<RawTuple, u64>> = vec![BTreeMap::new(); n];
        for (node, tuple, count) in features {
            if node as usize >= n {
                return Err(GraphError::InvalidStructure(format!(
                    "feature row references missing node {node}"
                )));
            }
            if tuple.0.len() != k - 1 {
                return Err(GraphError::InvalidStructure(format!(
                    "feature tuple of length {} for k = {k}",
                    tuple.0.len()
                )));
            }
            if count == 0 || feature_sets[node as usize].insert(tuple, count).is_some() {
                return Err(GraphError::InvalidStructure(format!(
                    "feature multiset for node {node} duplicated or zero-count"
                )));
            }
        }
        if let Some(id) = feature_sets.iter().position(BTreeMap::is_empty) {
            return Err(GraphError::InvalidStructure(format!(
                "node {id} has an empty feature set"
            )));
        }

        Ok(Mdbg {
            k,
            alphabet_sizes,
            series_len,
            keys,
            index,
            seq_out,
            hyper: hyper_map,
            features: feature_sets,
            dim_nodes,
        })
    }

    /// k-tuple order the graph was built with.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of dimensions D.
    pub fn dims(&self) -> usize {
        self.alphabet_sizes.len()
    }

    /// Effective alphabet size per dimension.
    pub fn alphabet_sizes(&self) -> &[u16] {
        &self.alphabet_sizes
    }

    /// Length S of the training series the graph was built from.
    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    /// Key for a node id. Panics on out-of-range ids (programmer error).
    pub fn key(&self, id: NodeId) -> &NodeKey {
        &self.keys[id as usize]
    }

    /// All node keys in id order.
    pub fn keys(&self) -> &[NodeKey] {
        &self.keys
    }

    /// Dense id for a key, if present. Keys whose shape can never occur in
    /// this graph (wrong tuple length, dimension outside 1..=D, symbol 0)
    /// are rejected as malformed rather than reported absent.
    pub fn node_lookup(&self, key: &NodeKey) -> GraphResult<Option<NodeId>> {
        if key.symbols.len() != self.k - 1 {
            return Err(GraphError::MalformedKey(format!(
                "tuple length {} != k-1 = {}",
                key.symbols.len(),
                self.k - 1
            )));
        }
        if key.dim == 0 || key.dim as usize > self.dims() {
            return Err(GraphError::MalformedKey(format!(
                "dimension {} outside 1..={}",
                key.dim,
                self.dims()
            )));
        }
        if key.symbols.contains(&0) {
            return Err(GraphError::MalformedKey("symbol 0 (symbols are 1-based)".into()));
        }
        Ok(self.index.get(key).copied())
    }

    /// Outgoing sequential edges of a node, ordered by target id.
    pub fn out_edges(&self, id: NodeId) -> &BTreeMap<NodeId, u64> {
        &self.seq_out[id as usize]
    }

    /// All directed sequential edges as (src, dst, weight), ordered by
    /// (src, dst).
    pub fn seq_edge_triples(&self) -> impl Iterator<Item = (NodeId, NodeId, u64)> + '_ {
        self.seq_out
            .iter()
            .enumerate()
            .flat_map(|(src, out)| out.iter().map(move |(&dst, &w)| (src as NodeId, dst, w)))
    }

    /// All undirected hyper edges as (smaller id, larger id, weight), in
    /// canonical order.
    pub fn hyper_edge_triples(&self) -> impl Iterator<Item = (NodeId, NodeId, u64)> + '_ {
        self.hyper.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    /// Feature multiset of a node: raw (k−1)-slice → occurrence count.
    pub fn feature_multiset(&self, id: NodeId) -> &BTreeMap<RawTuple, u64> {
        &self.features[id as usize]
    }

    /// Ids of all nodes in a dimension (1-based), in id order.
    pub fn dim_node_ids(&self, dim: u16) -> &[NodeId] {
        self.dim_nodes
            .get(dim as usize - 1)
            .map_or(&[], Vec::as_slice)
    }

    /// Size and weight tallies, with both hyper-edge counting conventions.
    pub fn stats(&self) -> GraphStats {
        let mut per_dim: Vec<DimStats> = (0..self.dims())
            .map(|i| DimStats {
                dim: i as u16 + 1,
                nodes: self.dim_nodes[i].len(),
                seq_edges: 0,
                seq_weight: 0,
            })
            .collect();
        for (src, out) in self.seq_out.iter().enumerate() {
            let d = self.keys[src].dim as usize - 1;
            per_dim[d].seq_edges += out.len();
            per_dim[d].seq_weight += out.values().sum::<u64>();
        }
        let seq_edges = per_dim.iter().map(|d| d.seq_edges).sum();
        let hyper_undirected = self.hyper.len();
        GraphStats {
            nodes: self.node_count(),
            seq_edges,
            hyper_edges_undirected: hyper_undirected,
            hyper_edges_directed: 2 * hyper_undirected,
            edges_with_hyper_directed: seq_edges + 2 * hyper_undirected,
            edges_with_hyper_undirected: seq_edges + hyper_undirected,
            per_dim,
            k: self.k,
            series_len: self.series_len,
        }
    }
}

//! Query-window resolution: sliding (k−1)-tuples, exact-or-nearest node
//! matching, binary mask vectors, and feature sampling.
//!
//! A query tuple that exists in the graph resolves to itself; an unseen one
//! resolves to the L1-nearest node of the same dimension (symbols compared
//! as integers), with ties broken toward the lexicographically smallest
//! symbol tuple. Matching never crosses dimensions: bin indices from
//! different alphabets are not commensurate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::discretize::{DiscretizeError, Discretizer};
use crate::graph::{GraphError, Mdbg, NodeId, NodeKey, RawTuple};
use crate::ingest::TimeSeriesDataset;

/// Errors raised while resolving queries.
#[derive(Debug, Error)]
pub enum QueryError {
    #[error("window of length {len} is shorter than k-1 = {}", k - 1)]
    WindowTooShort { len: usize, k: usize },
    #[error("graph has no nodes in dimension {dim}")]
    NoNodesInDimension { dim: u16 },
    #[error("node id {id} does not exist")]
    NodeNotFound { id: NodeId },
    #[error("malformed query window: {0}")]
    WindowShapeMismatch(String),
    #[error("invalid sample config: {0}")]
    InvalidSampleConfig(String),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type QueryResult<T> = Result<T, QueryError>;

/// An input window carrying both raw values and their discretized symbols,
/// `D` dimensions by `L` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWindow {
    pub raw: Vec<Vec<f64>>,
    pub symbols: Vec<Vec<u16>>,
}

impl QueryWindow {
    /// Discretizes raw rows through a fitted table. Out-of-range values
    /// clamp into the outermost bins, as queries may contain unseen values.
    pub fn from_raw(raw: Vec<Vec<f64>>, disc: &Discretizer) -> QueryResult<QueryWindow> {
        if raw.len() != disc.dims() {
            return Err(DiscretizeError::DimensionMismatch {
                expected: disc.dims(),
                found: raw.len(),
            }
            .into());
        }
        let l = raw.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(QueryError::WindowShapeMismatch("window has no steps".into()));
        }
        if raw.iter().any(|row| row.len() != l) {
            return Err(QueryError::WindowShapeMismatch(
                "window rows have different lengths".into(),
            ));
        }
        let mut symbols = Vec::with_capacity(raw.len());
        for (i, row) in raw.iter().enumerate() {
            let mut srow = Vec::with_capacity(row.len());
            for &v in row {
                srow.push(disc.symbol_for(i, v)?);
            }
            symbols.push(srow);
        }
        Ok(QueryWindow { raw, symbols })
    }

    /// Window from a dataset slice (e.g. the last L steps of a split).
    pub fn from_dataset(ds: &TimeSeriesDataset, disc: &Discretizer) -> QueryResult<QueryWindow> {
        Self::from_raw(ds.values.clone(), disc)
    }

    /// Window given directly as symbols; raw values mirror the symbols.
    /// Intended for symbol-level callers and tests.
    pub fn from_symbols(symbols: Vec<Vec<u16>>) -> QueryWindow {
        let raw = symbols
            .iter()
            .map(|row| row.iter().map(|&s| f64::from(s)).collect())
            .collect();
        QueryWindow { raw, symbols }
    }

    pub fn dims(&self) -> usize {
        self.symbols.len()
    }

    /// Window length L.
    pub fn len(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How one query tuple was matched to a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    pub query: NodeKey,
    pub node: NodeId,
    pub matched: NodeKey,
    pub distance: u64,
    pub exact: bool,
}

/// Binary mask over all graph nodes plus the per-tuple resolution log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskVector {
    pub bits: Vec<bool>,
    pub resolutions: Vec<Resolution>,
}

impl MaskVector {
    /// Ids of set bits, ascending.
    pub fn set_ids(&self) -> Vec<NodeId> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Feature-sampling parameters: `f` draws with replacement, seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleConfig {
    pub f: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { f: 16, seed: 0 }
    }
}

/// All sliding (k−1)-tuples of a window, dimension-major then position
/// order: `L − k + 2` tuples per dimension, `D·(L−k+2)` total.
pub fn extract_query_tuples(w: &QueryWindow, k: usize) -> QueryResult<Vec<NodeKey>> {
    if k < 2 {
        return Err(GraphError::OrderTooSmall(k).into());
    }
    let l = w.len();
    if l < k - 1 {
        return Err(QueryError::WindowTooShort { len: l, k });
    }
    let per_dim = l - (k - 1) + 1;
    let mut tuples = Vec::with_capacity(w.dims() * per_dim);
    for (i, row) in w.symbols.iter().enumerate() {
        for p in 0..per_dim {
            tuples.push(NodeKey::new(i as u16 + 1, row[p..p + k - 1].to_vec()));
        }
    }
    Ok(tuples)
}

/// Resolves one query tuple: the exact node when present (distance 0),
/// otherwise the L1-nearest node of the same dimension, ties to the
/// lexicographically smallest symbol tuple.
pub fn resolve(g: &Mdbg, q: &NodeKey) -> QueryResult<(NodeId, u64, bool)> {
    if let Some(id) = g.node_lookup(q)? {
        return Ok((id, 0, true));
    }
    let ids = g.dim_node_ids(q.dim);
    if ids.is_empty() {
        return Err(QueryError::NoNodesInDimension { dim: q.dim });
    }
    let mut best: Option<(u64, NodeId)> = None;
    for &id in ids {
        let key = g.key(id);
        let dist: u64 = key
            .symbols
            .iter()
            .zip(&q.symbols)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum();
        let better = match best {
            None => true,
            Some((d, cur)) => dist < d || (dist == d && key.symbols < g.key(cur).symbols),
        };
        if better {
            best = Some((dist, id));
        }
    }
    let (dist, id) = best.expect("dimension is non-empty");
    Ok((id, dist, false))
}

/// Resolves every sliding tuple of the window and returns the union mask
/// with the full resolution log in extraction order.
pub fn mask(g: &Mdbg, w: &QueryWindow, k: usize) -> QueryResult<MaskVector> {
    let tuples = extract_query_tuples(w, k)?;
    let mut bits = vec![false; g.node_count()];
    let mut resolutions = Vec::with_capacity(tuples.len());
    for query in tuples {
        let (node, distance, exact) = resolve(g, &query)?;
        bits[node as usize] = true;
        resolutions.push(Resolution {
            matched: g.key(node).clone(),
            query,
            node,
            distance,
            exact,
        });
    }
    Ok(MaskVector { bits, resolutions })
}

/// Draws `cfg.f` raw tuples from a node's feature multiset, with
/// replacement, weighted by multiplicity. Deterministic for a given seed.
pub fn sample_features(g: &Mdbg, node: NodeId, cfg: &SampleConfig) -> QueryResult<Vec<RawTuple>> {
    if cfg.f == 0 {
        return Err(QueryError::InvalidSampleConfig("f must be at least 1".into()));
    }
    if (node as usize) >= g.node_count() {
        return Err(QueryError::NodeNotFound { id: node });
    }
    let set = g.feature_multiset(node);
    let entries: Vec<(&RawTuple, u64)> = set.iter().map(|(t, &c)| (t, c)).collect();
    let mut cumulative = Vec::with_capacity(entries.len());
    let mut total = 0u64;
    for &(_, c) in &entries {
        total += c;
        cumulative.push(total);
    }
    assert!(total > 0, "feature multisets are never empty");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.f)
        .map(|_| {
            let x = rng.random_range(0..total);
            let idx = cumulative.partition_point(|&c| c <= x);
            entries[idx].0.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::DiscreteDataset;
    use crate::reference;

    fn graph(symbol_rows: Vec<Vec<u16>>, alphabets: Vec<u16>, k: usize) -> Mdbg {
        let raw = TimeSeriesDataset::new(
            symbol_rows
                .iter()
                .map(|r| r.iter().map(|&s| f64::from(s)).collect())
                .collect(),
            (0..symbol_rows.len()).map(|i| format!("d{i}")).collect(),
            None,
        )
        .unwrap();
        let disc = DiscreteDataset {
            symbols: symbol_rows,
            alphabet_sizes: alphabets,
        };
        Mdbg::build(&raw, &disc, k).unwrap()
    }

    #[test]
    fn sliding_tuples_enumerate_in_order() {
        let w = QueryWindow::from_symbols(vec![vec![1, 2, 3, 4, 5]]);
        let tuples = extract_query_tuples(&w, 3).unwrap();
        let expected: Vec<NodeKey> = [[1, 2], [2, 3], [3, 4], [4, 5]]
            .iter()
            .map(|s| NodeKey::new(1, s.to_vec()))
            .collect();
        assert_eq!(tuples, expected);
    }

    #[test]
    fn tuple_count_is_d_times_window_slots() {
        // The benchmark shape: D=7, L=12, k=4 → 7 × 10 = 70 tuples.
        let w = QueryWindow::from_symbols(vec![vec![1; 12]; 7]);
        let tuples = extract_query_tuples(&w, 4).unwrap();
        assert_eq!(tuples.len(), 70);
        // Boundary: L = k−1 leaves exactly one tuple per dimension.
        let w = QueryWindow::from_symbols(vec![vec![1, 1, 1], vec![2, 2, 2]]);
        assert_eq!(extract_query_tuples(&w, 4).unwrap().len(), 2);
        // One step shorter is an error.
        let w = QueryWindow::from_symbols(vec![vec![1, 1]]);
        assert!(matches!(
            extract_query_tuples(&w, 4),
            Err(QueryError::WindowTooShort { len: 2, k: 4 })
        ));
    }

    #[test]
    fn exact_queries_resolve_to_themselves() {
        let g = graph(vec![vec![1, 2, 3, 1, 2]], vec![3], 3);
        let q = NodeKey::new(1, vec![2, 3]);
        let (id, dist, exact) = resolve(&g, &q).unwrap();
        assert_eq!(g.key(id), &q);
        assert_eq!(dist, 0);
        assert!(exact);
    }

    #[test]
    fn nearest_resolution_minimizes_l1_within_the_dimension() {
        // Nodes in dim 1: (1,2,3) and (4,5,6).
        let g = graph(vec![vec![1, 2, 3, 10, 4, 5, 6]], vec![10], 4);
        let (id, dist, exact) = resolve(&g, &NodeKey::new(1, vec![2, 2, 3])).unwrap();
        assert_eq!(g.key(id).symbols, vec![1, 2, 3]);
        assert_eq!(dist, 1);
        assert!(!exact);
    }

    #[test]
    fn equidistant_ties_go_to_the_smaller_tuple() {
        // Nodes: (1,1), (1,3), (3,1). Query (1,2) ties (1,1) and (1,3).
        let g = graph(vec![vec![1, 1, 3, 1, 1]], vec![3], 3);
        let (id, dist, exact) = resolve(&g, &NodeKey::new(1, vec![1, 2])).unwrap();
        assert_eq!(g.key(id).symbols, vec![1, 1]);
        assert_eq!(dist, 1);
        assert!(!exact);
    }

    #[test]
    fn resolution_agrees_with_the_exhaustive_scan() {
        let g = graph(
            vec![vec![1, 4, 2, 5, 3, 1, 4, 2], vec![2, 2, 1, 1, 2, 2, 1, 1]],
            vec![5, 2],
            3,
        );
        for dim in 1..=2u16 {
            let alpha = if dim == 1 { 5 } else { 2 };
            for a in 1..=alpha {
                for b in 1..=alpha {
                    let q = NodeKey::new(dim, vec![a, b]);
                    let (id, dist, exact) = resolve(&g, &q).unwrap();
                    let (oid, odist, oexact) =
                        reference::nearest_by_scan(&g, &q).expect("dimension populated");
                    assert_eq!((id, dist, exact), (oid, odist, oexact), "query {q}");
                }
            }
        }
    }

    #[test]
    fn missing_dimension_nodes_are_reported() {
        use crate::graph::RawTuple;
        // Two declared dimensions but nodes only in dimension 1.
        let g = Mdbg::from_parts(
            3,
            vec![2, 2],
            4,
            vec![NodeKey::new(1, vec![2, 2])],
            vec![(0, 0, 1)],
            vec![],
            vec![(0, RawTuple(vec![2.0, 2.0]), 1)],
        )
        .unwrap();
        assert!(matches!(
            resolve(&g, &NodeKey::new(2, vec![1, 1])),
            Err(QueryError::NoNodesInDimension { dim: 2 })
        ));
    }

    #[test]
    fn training_window_masks_are_all_exact() {
        let symbols = vec![vec![1, 2, 3, 1, 2, 3, 2, 1], vec![1, 1, 2, 2, 1, 1, 2, 2]];
        let g = graph(symbols.clone(), vec![3, 2], 3);
        // A window cut straight out of the training series.
        let w = QueryWindow::from_symbols(
            symbols.iter().map(|row| row[2..7].to_vec()).collect(),
        );
        let m = mask(&g, &w, 3).unwrap();
        assert!(m.resolutions.iter().all(|r| r.exact && r.distance == 0));
        assert!(m.popcount() <= 2 * 4, "popcount bounded by tuple count");
        assert_eq!(m.resolutions.len(), 8);
        // Every set bit is the exact node of some resolution.
        for r in &m.resolutions {
            assert!(m.bits[r.node as usize]);
            assert_eq!(r.matched, r.query);
        }
    }

    #[test]
    fn masking_is_idempotent_including_the_log() {
        let g = graph(vec![vec![1, 3, 2, 1, 3, 2]], vec![3], 3);
        let w = QueryWindow::from_symbols(vec![vec![3, 3, 1, 2]]);
        let m1 = mask(&g, &w, 3).unwrap();
        let m2 = mask(&g, &w, 3).unwrap();
        assert_eq!(m1, m2);
        // This window contains unseen tuples; they must resolve non-exact
        // while staying inside the right dimension.
        assert!(m1.resolutions.iter().any(|r| !r.exact));
        for r in &m1.resolutions {
            assert_eq!(g.key(r.node).dim, r.query.dim);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_multiplicity() {
        // Node (1,2) sees raw slice [1,2] three times and [1.5,2.5] once.
        let raw = TimeSeriesDataset::new(
            vec![vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.5, 2.5]],
            vec!["a".into()],
            None,
        )
        .unwrap();
        let disc = DiscreteDataset {
            symbols: vec![vec![1, 2, 1, 2, 1, 2, 1, 2]],
            alphabet_sizes: vec![2],
        };
        let g = Mdbg::build(&raw, &disc, 3).unwrap();
        let node = g
            .node_lookup(&NodeKey::new(1, vec![1, 2]))
            .unwrap()
            .unwrap();
        let set = g.feature_multiset(node);
        assert_eq!(set.get(&RawTuple(vec![1.0, 2.0])), Some(&3));
        assert_eq!(set.get(&RawTuple(vec![1.5, 2.5])), Some(&1));

        let cfg = SampleConfig { f: 10_000, seed: 42 };
        let draws = sample_features(&g, node, &cfg).unwrap();
        let heavy = draws
            .iter()
            .filter(|t| t.0 == vec![1.0, 2.0])
            .count() as f64;
        let share = heavy / 10_000.0;
        assert!((share - 0.75).abs() < 0.02, "multiplicity share {share}");

        let again = sample_features(&g, node, &cfg).unwrap();
        assert_eq!(draws, again, "same seed must reproduce the draws");
        let other = sample_features(&g, node, &SampleConfig { f: 10_000, seed: 43 }).unwrap();
        assert_ne!(draws, other, "different seed should differ somewhere");
    }

    #[test]
    fn single_tuple_nodes_sample_identically() {
        let g = graph(vec![vec![1, 2, 3]], vec![3], 3);
        let node = g
            .node_lookup(&NodeKey::new(1, vec![1, 2]))
            .unwrap()
            .unwrap();
        let draws = sample_features(&g, node, &SampleConfig { f: 16, seed: 7 }).unwrap();
        assert_eq!(draws.len(), 16);
        assert!(draws.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn sampling_errors_are_reported() {
        let g = graph(vec![vec![1, 2, 3]], vec![3], 3);
        assert!(matches!(
            sample_features(&g, 99, &SampleConfig::default()),
            Err(QueryError::NodeNotFound { id: 99 })
        ));
        assert!(matches!(
            sample_features(&g, 0, &SampleConfig { f: 0, seed: 0 }),
            Err(QueryError::InvalidSampleConfig(_))
        ));
    }

    #[test]
    fn window_construction_discretizes_and_validates() {
        let train = TimeSeriesDataset::new(
            vec![vec![0.0, 10.0], vec![5.0, 15.0]],
            vec!["a".into(), "b".into()],
            None,
        )
        .unwrap();
        let disc = Discretizer::fit_uniform(&train, &[5, 5]).unwrap();
        let w =
            QueryWindow::from_raw(vec![vec![4.0, -100.0], vec![5.0, 100.0]], &disc).unwrap();
        assert_eq!(w.symbols, vec![vec![3, 1], vec![1, 5]]);

        assert!(QueryWindow::from_raw(vec![vec![1.0]], &disc).is_err());
        assert!(matches!(
            QueryWindow::from_raw(vec![vec![1.0], vec![1.0, 2.0]], &disc),
            Err(QueryError::WindowShapeMismatch(_))
        ));
    }
}

//! Personalized-PageRank diffusion over the combined MdBG adjacency, with
//! per-node top-k sparsification.
//!
//! Sequential and hyper edges are merged into one weighted adjacency (hyper
//! edges contribute in both directions), normalized either row-stochastically
//! or symmetrically, and diffused per source with the restarted power
//! iteration `π ← c·e_s + (1−c)·π·T`. The iteration contracts by a factor
//! (1−c) per step, so convergence to any positive tolerance is geometric;
//! sources are independent and solved in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Mdbg, NodeId};

/// Errors raised by diffusion.
#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid diffusion config: {0}")]
    InvalidConfig(String),
    #[error("cannot diffuse an empty graph")]
    EmptyGraph,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type DiffusionResult<T> = Result<T, DiffusionError>;

/// Adjacency normalization applied before diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each row divided by its out-weight sum. The default: PPR rows then
    /// sum to 1, which doubles as a strong correctness check.
    #[default]
    Row,
    /// `D^{-1/2} A D^{-1/2}` with `D` the diagonal of row sums.
    Symmetric,
}

/// PPR solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Teleport (restart) probability `c` in (0, 1].
    pub teleport: f64,
    /// Entries kept per node after sparsification.
    pub top_k: usize,
    pub normalization: Normalization,
    /// Convergence threshold on the max-abs change per iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            teleport: 0.15,
            top_k: 32,
            normalization: Normalization::Row,
            tolerance: 1e-9,
            max_iterations: 10_000,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> DiffusionResult<()> {
        if !(self.teleport > 0.0 && self.teleport <= 1.0) {
            return Err(DiffusionError::InvalidConfig(format!(
                "teleport {} outside (0, 1]",
                self.teleport
            )));
        }
        if self.top_k == 0 {
            return Err(DiffusionError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(DiffusionError::InvalidConfig(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(DiffusionError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse row-major (CSR) transition matrix over the graph's node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<NodeId>,
    values: Vec<f64>,
}

impl TransitionMatrix {
    /// Merges sequential and hyper edges with equal status and normalizes.
    /// See [`TransitionMatrix::from_graph_weighted`].
    pub fn from_graph(g: &Mdbg, normalization: Normalization) -> DiffusionResult<Self> {
        Self::from_graph_weighted(g, normalization, 1.0, 1.0)
    }

    /// Combines the two edge types into one adjacency — sequential edges
    /// directed, hyper edges in both directions — scaled by the per-type
    /// multipliers. Nodes left without outgoing weight get a self-loop of
    /// weight 1 before normalization, so every row is well defined.
    pub fn from_graph_weighted(
        g: &Mdbg,
        normalization: Normalization,
        seq_multiplier: f64,
        hyper_multiplier: f64,
    ) -> DiffusionResult<Self> {
        let n = g.node_count();
        if n == 0 {
            return Err(DiffusionError::EmptyGraph);
        }
        if seq_multiplier < 0.0 || hyper_multiplier < 0.0 {
            return Err(DiffusionError::InvalidConfig(
                "edge-type multipliers must be non-negative".into(),
            ));
        }
        let mut rows: Vec<std::collections::BTreeMap<NodeId, f64>> = vec![Default::default(); n];
        if seq_multiplier > 0.0 {
            for (src, dst, w) in g.seq_edge_triples() {
                *rows[src as usize].entry(dst).or_insert(0.0) += w as f64 * seq_multiplier;
            }
        }
        if hyper_multiplier > 0.0 {
            for (a, b, w) in g.hyper_edge_triples() {
                let w = w as f64 * hyper_multiplier;
                *rows[a as usize].entry(b).or_insert(0.0) += w;
                *rows[b as usize].entry(a).or_insert(0.0) += w;
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if row.is_empty() {
                row.insert(i as NodeId, 1.0);
            }
        }
        let degrees: Vec<f64> = rows.iter().map(|r| r.values().sum()).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            for (&j, &w) in row {
                col_idx.push(j);
                values.push(match normalization {
                    Normalization::Row => w / degrees[i],
                    Normalization::Symmetric => {
                        w / (degrees[i].sqrt() * degrees[j as usize].sqrt())
                    }
                });
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Wraps an already-normalized dense matrix (oracle and test plumbing).
    pub fn from_dense(rows: &[Vec<f64>]) -> DiffusionResult<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(DiffusionError::EmptyGraph);
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            if row.len() != n {
                return Err(DiffusionError::InvalidConfig(format!(
                    "row of length {} in a {n}-node matrix",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    return Err(DiffusionError::InvalidConfig(
                        "transition weights must be non-negative".into(),
                    ));
                }
                if v != 0.0 {
                    col_idx.push(j as NodeId);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entries of row `i` as (column, value), ordered by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&j, &v)| (j, v))
    }

    /// Dense copy, for comparison against the dense oracle.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j as usize] += v;
            }
        }
        out
    }
}

/// One personalized-PageRank row: the stationary solution of
/// `π = c·e_source + (1−c)·π·T`, iterated until the max-abs change is at
/// most `cfg.tolerance`.
pub fn ppr_row(
    t: &TransitionMatrix,
    source: NodeId,
    cfg: &DiffusionConfig,
) -> DiffusionResult<Vec<f64>> {
    cfg.validate()?;
    let n = t.n();
    assert!((source as usize) < n, "source node out of range");
    let c = cfg.teleport;
    let mut pi = vec![0.0; n];
    pi[source as usize] = 1.0;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        next.fill(0.0);
        for (i, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, v) in t.row(i) {
                next[j as usize] += mass * v;
            }
        }
        for v in next.iter_mut() {
            *v *= 1.0 - c;
        }
        next[source as usize] += c;
        residual = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if residual <= cfg.tolerance {
            return Ok(pi);
        }
    }
    Err(DiffusionError::NoConvergence {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Full dense diffusion matrix `Π = c·(I − (1−c)·T)^{-1}`, one solved row
/// per source node, computed in parallel. Quadratic memory — intended for
/// graphs small enough to hold `n²` floats; larger pipelines should use
/// [`diffuse_topk`].
pub fn ppr_diffuse(t: &TransitionMatrix, cfg: &DiffusionConfig) -> DiffusionResult<Vec<Vec<f64>>> {
    cfg.validate()?;
    (0..t.n() as NodeId)
        .into_par_iter()
        .map(|s| ppr_row(t, s, cfg))
        .collect()
}

/// A top-k-sparsified diffusion matrix: at most `top_k` outgoing entries
/// per node, stored ordered by target id.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusedGraph {
    /// Per-source kept entries (target, weight), ordered by target id.
    pub rows: Vec<Vec<(NodeId, f64)>>,
    pub top_k: usize,
    /// Whether kept rows were rescaled to sum to 1.
    pub renormalized: bool,
}

impl DiffusedGraph {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// All kept entries as (src, dst, weight), ordered by (src, dst).
    pub fn triples(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().map(move |&(d, w)| (s as NodeId, d, w)))
    }
}

fn sparsify_row(row: &[f64], top_k: usize, renormalize: bool) -> Vec<(NodeId, f64)> {
    let mut kept: Vec<(NodeId, f64)> = row
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| (j as NodeId, w))
        .collect();
    // Largest weight first; exact ties go to the smaller target id.
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.truncate(top_k);
    kept.sort_by_key(|&(j, _)| j);
    if renormalize {
        let sum: f64 = kept.iter().map(|&(_, w)| w).sum();
        if sum > 0.0 {
            for (_, w) in kept.iter_mut() {
                *w /= sum;
            }
        }
    }
    kept
}

/// Keeps the `top_k` largest entries of every row (ties broken toward the
/// smaller target id). Weights are kept as-is unless `renormalize` rescales
/// each row to sum to 1.
pub fn sparsify_topk(p: &[Vec<f64>], top_k: usize, renormalize: bool) -> DiffusedGraph {
    DiffusedGraph {
        rows: p
            .iter()
            .map(|row| sparsify_row(row, top_k, renormalize))
            .collect(),
        top_k,
        renormalized: renormalize,
    }
}

/// Diffuses and sparsifies in one pass without materializing the dense
/// `n × n` matrix: each source's PPR row is reduced to its top-k entries as
/// soon as it is solved.
pub fn diffuse_topk(
    t: &TransitionMatrix,
    cfg: &DiffusionConfig,
    renormalize: bool,
) -> DiffusionResult<DiffusedGraph> {
    cfg.validate()?;
    let rows = (0..t.n() as NodeId)
        .into_par_iter()
        .map(|s| ppr_row(t, s, cfg).map(|row| sparsify_row(&row, cfg.top_k, renormalize)))
        .collect::<DiffusionResult<Vec<_>>>()?;
    Ok(DiffusedGraph {
        rows,
        top_k: cfg.top_k,
        renormalized: renormalize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::DiscreteDataset;
    use crate::ingest::TimeSeriesDataset;
    use crate::reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
    fn config_validation_rejects_bad_fields() {
        let ok = DiffusionConfig::default();
        assert!(ok.validate().is_ok());
        for (field, cfg) in [
            ("teleport 0", DiffusionConfig { teleport: 0.0, ..ok }),
            ("teleport > 1", DiffusionConfig { teleport: 1.5, ..ok }),
            ("top_k 0", DiffusionConfig { top_k: 0, ..ok }),
            ("tolerance 0", DiffusionConfig { tolerance: 0.0, ..ok }),
            ("max_iterations 0", DiffusionConfig { max_iterations: 0, ..ok }),
        ] {
            assert!(cfg.validate().is_err(), "{field} should be rejected");
        }
    }

    #[test]
    fn two_cycle_normalizes_to_permutation() {
        // k = 2 over [1,2,1]: nodes (1) and (2) with unit edges both ways.
        let g = graph(vec![vec![1, 2, 1]], vec![2], 2);
        let t = TransitionMatrix::from_graph(&g, Normalization::Row).unwrap();
        assert_eq!(t.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn equal_out_weights_split_evenly() {
        // Node (1) has edges to (2) and (3), twice each.
        let g = graph(vec![vec![1, 2, 1, 3, 1, 2, 1, 3, 1]], vec![3], 2);
        let t = TransitionMatrix::from_graph(&g, Normalization::Row).unwrap();
        let one = g
            .node_lookup(&crate::graph::NodeKey::new(1, vec![1]))
            .unwrap()
            .unwrap();
        let row: Vec<(NodeId, f64)> = t.row(one as usize).collect();
        assert_eq!(row.len(), 2);
        for (_, w) in row {
            assert!((w - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn edgeless_node_gets_a_self_loop() {
        use crate::graph::{NodeKey, RawTuple};
        // Hand-assembled graph where node 1 has no edges at all.
        let g = Mdbg::from_parts(
            3,
            vec![3, 3],
            4,
            vec![NodeKey::new(1, vec![2, 2]), NodeKey::new(2, vec![3, 3])],
            vec![(0, 0, 1)],
            vec![],
            vec![
                (0, RawTuple(vec![2.0, 2.0]), 1),
                (1, RawTuple(vec![3.0, 3.0]), 1),
            ],
        )
        .unwrap();
        let t = TransitionMatrix::from_graph(&g, Normalization::Row).unwrap();
        let row: Vec<(NodeId, f64)> = t.row(1).collect();
        assert_eq!(row, vec![(1, 1.0)]);
    }

    #[test]
    fn ppr_matches_two_node_closed_form_to_1e12() {
        let t = TransitionMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cfg = DiffusionConfig {
            tolerance: 1e-14,
            ..DiffusionConfig::default()
        };
        let p = ppr_diffuse(&t, &cfg).unwrap();
        let scale = 0.15 / 0.2775;
        assert!((p[0][0] - scale).abs() < 1e-12);
        assert!((p[0][1] - scale * 0.85).abs() < 1e-12);
        assert!((p[1][0] - scale * 0.85).abs() < 1e-12);
        assert!((p[1][1] - scale).abs() < 1e-12);
    }

    #[test]
    fn single_node_diffuses_to_one() {
        let t = TransitionMatrix::from_dense(&[vec![1.0]]).unwrap();
        let p = ppr_diffuse(&t, &DiffusionConfig::default()).unwrap();
        assert_eq!(p, vec![vec![1.0]]);
    }

    #[test]
    fn teleport_one_is_exactly_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = reference::random_transition(&mut rng, 40);
        let t = TransitionMatrix::from_dense(&dense).unwrap();
        let cfg = DiffusionConfig {
            teleport: 1.0,
            ..DiffusionConfig::default()
        };
        let p = ppr_diffuse(&t, &cfg).unwrap();
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, f64::from(u8::from(i == j)), "Π[{i}][{j}]");
            }
        }
    }

    #[test]
    fn iterative_solve_tracks_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let dense = reference::random_transition(&mut rng, 50);
            let t = TransitionMatrix::from_dense(&dense).unwrap();
            let p = ppr_diffuse(&t, &DiffusionConfig::default()).unwrap();
            let oracle = reference::dense_ppr(&dense, 0.15);
            for (row_it, row_or) in p.iter().zip(&oracle) {
                for (a, b) in row_it.iter().zip(row_or) {
                    assert!((a - b).abs() <= 1e-6, "iterative {a} vs dense {b}");
                }
            }
            // Row-stochastic input ⇒ every PPR row sums to 1.
            for row in &p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            // Self mass never drops below the teleport probability.
            for (s, row) in p.iter().enumerate() {
                assert!(row[s] >= 0.15 - 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_normalization_converges_and_matches_oracle() {
        let g = graph(
            vec![vec![1, 2, 3, 1, 2, 3, 2, 1], vec![1, 1, 2, 2, 1, 1, 2, 2]],
            vec![3, 2],
            3,
        );
        let t = TransitionMatrix::from_graph(&g, Normalization::Symmetric).unwrap();
        let p = ppr_diffuse(&t, &DiffusionConfig::default()).unwrap();
        let oracle = reference::dense_ppr(&t.to_dense(), 0.15);
        for (row_it, row_or) in p.iter().zip(&oracle) {
            for (a, b) in row_it.iter().zip(row_or) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let t = TransitionMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cfg = DiffusionConfig {
            tolerance: 1e-300,
            max_iterations: 3,
            ..DiffusionConfig::default()
        };
        match ppr_row(&t, 0, &cfg) {
            Err(DiffusionError::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn sparsifier_keeps_top_entries_with_deterministic_ties() {
        let rows = vec![vec![0.5, 0.3, 0.2]];
        let dg = sparsify_topk(&rows, 2, false);
        assert_eq!(dg.rows[0], vec![(0, 0.5), (1, 0.3)]);

        let rows = vec![vec![0.4, 0.4, 0.2]];
        let dg = sparsify_topk(&rows, 1, false);
        assert_eq!(dg.rows[0], vec![(0, 0.4)], "tie goes to the smaller id");

        let rows = vec![vec![0.1, 0.2, 0.7]];
        let dg = sparsify_topk(&rows, 10, false);
        assert_eq!(dg.rows[0].len(), 3, "top_k beyond support keeps all");

        // Support smaller than top_k: zeros are never kept.
        let rows = vec![vec![0.0, 0.9, 0.0, 0.1]];
        let dg = sparsify_topk(&rows, 3, false);
        assert_eq!(dg.rows[0], vec![(1, 0.9), (3, 0.1)]);
    }

    #[test]
    fn renormalized_rows_sum_to_one() {
        let rows = vec![vec![0.5, 0.3, 0.2]];
        let dg = sparsify_topk(&rows, 2, true);
        let sum: f64 = dg.rows[0].iter().map(|&(_, w)| w).sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(dg.renormalized);
    }

    #[test]
    fn diffuse_topk_streams_to_the_same_result_as_dense_then_sparsify() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dense = reference::random_transition(&mut rng, 30);
        let t = TransitionMatrix::from_dense(&dense).unwrap();
        let cfg = DiffusionConfig {
            top_k: 4,
            ..DiffusionConfig::default()
        };
        let streamed = diffuse_topk(&t, &cfg, false).unwrap();
        let dense_p = ppr_diffuse(&t, &cfg).unwrap();
        let two_step = sparsify_topk(&dense_p, 4, false);
        assert_eq!(streamed, two_step);
        for row in &streamed.rows {
            assert!(row.len() <= 4);
        }
    }
}

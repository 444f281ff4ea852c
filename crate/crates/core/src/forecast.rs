//! A symbolic frequency forecaster over the graph's sequential edges.
//!
//! Each dimension is forecast independently: the window's last (k−1)-symbol
//! state resolves to a node, the outgoing edge weights give a distribution
//! over the next symbol, and bin centers map symbols back to real values.
//! This is a deliberately simple frequency model — it exists to verify,
//! end to end and at desk scale, that the graph captures temporal structure,
//! not to compete with trained forecasters.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{DiscretizeError, Discretizer};
use crate::graph::{GraphError, Mdbg, NodeId, NodeKey};
use crate::query::{self, QueryError, QueryWindow};

/// Errors raised by forecasting.
#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("forecast horizon must be at least 1")]
    InvalidHorizon,
    #[error("state {state} cannot be resolved to any node: {reason}")]
    UnresolvableState { state: NodeKey, reason: String },
    #[error("series have different lengths ({left} vs {right})")]
    ShapeMismatch { left: usize, right: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

pub type ForecastResult<T> = Result<T, ForecastError>;

/// How a per-step prediction turns a symbol distribution into a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMode {
    /// Emit the bin center of the most probable next symbol.
    #[default]
    Greedy,
    /// Emit the probability-weighted mean of bin centers.
    Expected,
}

/// What to do when the current state's node has no outgoing edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Borrow the distribution of the L1-nearest node that has out-edges.
    #[default]
    NearestNode,
    /// Put all mass on the state's own last symbol.
    RepeatLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub horizon: usize,
    #[serde(default)]
    pub mode: ForecastMode,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 96,
            mode: ForecastMode::default(),
            fallback: Fallback::default(),
        }
    }
}

/// Distribution over a node's successor symbols, read off its outgoing
/// sequential edges. Successors of one node differ exactly in their last
/// symbol, so keying by that symbol loses nothing.
fn out_distribution(g: &Mdbg, node: NodeId) -> Option<Vec<(u16, f64)>> {
    let out = g.out_edges(node);
    if out.is_empty() {
        return None;
    }
    let total: u64 = out.values().sum();
    let mut dist: Vec<(u16, f64)> = out
        .iter()
        .map(|(&succ, &w)| {
            let last = *g.key(succ).symbols.last().expect("k >= 2 keys are non-empty");
            (last, w as f64 / total as f64)
        })
        .collect();
    dist.sort_by_key(|&(symbol, _)| symbol);
    Some(dist)
}

/// L1-nearest node in the state's dimension that has at least one outgoing
/// edge; ties break toward the lexicographically smaller symbol tuple.
fn nearest_with_out_edges(g: &Mdbg, state: &NodeKey) -> Option<NodeId> {
    let mut best: Option<(u64, NodeId)> = None;
    for &id in g.dim_node_ids(state.dim) {
        if g.out_edges(id).is_empty() {
            continue;
        }
        let d: u64 = g
            .key(id)
            .symbols
            .iter()
            .zip(&state.symbols)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum();
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && g.key(id).symbols < g.key(bid).symbols),
        };
        if better {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

/// Probability distribution over the next symbol of `state`'s dimension,
/// proportional to the resolved node's outgoing sequential edge weights.
/// Absent states resolve via L1-nearest first; sink nodes fall back per
/// `fallback`. The result is sorted by symbol and sums to 1.
pub fn predict_next_symbol(
    g: &Mdbg,
    state: &NodeKey,
    fallback: Fallback,
) -> ForecastResult<Vec<(u16, f64)>> {
    let (node, _, _) = query::resolve(g, state).map_err(|e| ForecastError::UnresolvableState {
        state: state.clone(),
        reason: e.to_string(),
    })?;
    if let Some(dist) = out_distribution(g, node) {
        return Ok(dist);
    }
    let own_last = *state.symbols.last().expect("states carry k-1 >= 1 symbols");
    match fallback {
        Fallback::RepeatLast => Ok(vec![(own_last, 1.0)]),
        Fallback::NearestNode => match nearest_with_out_edges(g, state) {
            Some(id) => Ok(out_distribution(g, id).expect("candidate has out-edges")),
            None => {
                warn!(
                    "dimension {} has no node with outgoing edges; repeating last symbol",
                    state.dim
                );
                Ok(vec![(own_last, 1.0)])
            }
        },
    }
}

/// Most probable symbol, ties broken toward the smaller symbol. The input
/// is sorted by symbol, so strict improvement keeps the first maximum.
fn argmax_symbol(dist: &[(u16, f64)]) -> u16 {
    let mut best = dist[0];
    for &(symbol, p) in &dist[1..] {
        if p > best.1 {
            best = (symbol, p);
        }
    }
    best.0
}

/// Rolls the symbolic model forward `cfg.horizon` steps per dimension and
/// maps symbols back to values through bin centers. Returns a D × horizon
/// matrix. The symbolic state always advances by the argmax symbol; modes
/// differ only in the emitted value (center of the argmax bin vs. the
/// expectation over centers).
pub fn forecast(
    g: &Mdbg,
    d: &Discretizer,
    window: &QueryWindow,
    cfg: &ForecastConfig,
) -> ForecastResult<Vec<Vec<f64>>> {
    if cfg.horizon == 0 {
        return Err(ForecastError::InvalidHorizon);
    }
    let k = g.k();
    if window.len() < k - 1 {
        return Err(QueryError::WindowTooShort {
            len: window.len(),
            k,
        }
        .into());
    }
    let mut out = Vec::with_capacity(window.dims());
    for (i, row) in window.symbols.iter().enumerate() {
        let dim = (i + 1) as u16;
        let mut state: Vec<u16> = row[row.len() - (k - 1)..].to_vec();
        let mut values = Vec::with_capacity(cfg.horizon);
        for _ in 0..cfg.horizon {
            let dist = predict_next_symbol(g, &NodeKey::new(dim, state.clone()), cfg.fallback)?;
            let next = argmax_symbol(&dist);
            let value = match cfg.mode {
                ForecastMode::Greedy => d.bin_center(i, next)?,
                ForecastMode::Expected => {
                    let mut acc = 0.0;
                    for &(symbol, p) in &dist {
                        acc += p * d.bin_center(i, symbol)?;
                    }
                    acc
                }
            };
            values.push(value);
            state.rotate_left(1);
            *state.last_mut().expect("non-empty state") = next;
        }
        out.push(values);
    }
    Ok(out)
}

/// Mean squared error, `(1/n) Σ (y_i − ŷ_i)²`.
pub fn mse(truth: &[f64], predicted: &[f64]) -> ForecastResult<f64> {
    check_lengths(truth, predicted)?;
    let n = truth.len() as f64;
    Ok(truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n)
}

/// Mean absolute error, `(1/n) Σ |y_i − ŷ_i|`.
pub fn mae(truth: &[f64], predicted: &[f64]) -> ForecastResult<f64> {
    check_lengths(truth, predicted)?;
    let n = truth.len() as f64;
    Ok(truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs())
        .sum::<f64>()
        / n)
}

fn check_lengths(truth: &[f64], predicted: &[f64]) -> ForecastResult<()> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(ForecastError::ShapeMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::DiscreteDataset;
    use crate::ingest::TimeSeriesDataset;

    fn graph_from_symbols(symbol_rows: Vec<Vec<u16>>, alphabets: Vec<u16>, k: usize) -> Mdbg {
        let raw = TimeSeriesDataset::new(
            symbol_rows
                .iter()
                .map(|row| row.iter().map(|&s| f64::from(s)).collect())
                .collect(),
            (0..symbol_rows.len()).map(|i| format!("d{i}")).collect(),
            None,
        )
        .expect("valid raw");
        let disc = DiscreteDataset {
            symbols: symbol_rows,
            alphabet_sizes: alphabets,
        };
        Mdbg::build(&raw, &disc, k).expect("build")
    }

    #[test]
    fn distribution_is_proportional_to_out_weights() {
        // 1→2 three times, 1→3 once: P(2) = 0.75, P(3) = 0.25.
        let g = graph_from_symbols(vec![vec![1, 2, 1, 2, 1, 2, 1, 3]], vec![3], 2);
        let dist =
            predict_next_symbol(&g, &NodeKey::new(1, vec![1]), Fallback::NearestNode).unwrap();
        assert_eq!(dist, vec![(2, 0.75), (3, 0.25)]);
        assert!((dist.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sink_with_repeat_last_puts_all_mass_on_own_symbol() {
        // Node 3 is a sink: the walk 1→2→3 never leaves 3.
        let g = graph_from_symbols(vec![vec![1, 2, 3]], vec![3], 2);
        let dist =
            predict_next_symbol(&g, &NodeKey::new(1, vec![3]), Fallback::RepeatLast).unwrap();
        assert_eq!(dist, vec![(3, 1.0)]);
    }

    #[test]
    fn sink_with_nearest_node_borrows_a_neighbor_distribution() {
        let g = graph_from_symbols(vec![vec![1, 2, 3]], vec![3], 2);
        // Nearest node to 3 with out-edges is 2 (distance 1); 2 → 3 always.
        let dist =
            predict_next_symbol(&g, &NodeKey::new(1, vec![3]), Fallback::NearestNode).unwrap();
        assert_eq!(dist, vec![(3, 1.0)]);
    }

    #[test]
    fn absent_state_equals_resolve_then_predict() {
        // Symbols 4 and 5 never occur; both are L1-nearest to node 3,
        // which has out-edges (3 → 2 three times).
        let g = graph_from_symbols(vec![vec![2, 3, 2, 3, 2, 3, 2, 1]], vec![5], 2);
        let absent = NodeKey::new(1, vec![5]);
        let (resolved, distance, exact) = query::resolve(&g, &absent).unwrap();
        assert!(!exact);
        assert_eq!(g.key(resolved).symbols, vec![3]);
        assert_eq!(distance, 2);
        let via_state = predict_next_symbol(&g, &absent, Fallback::NearestNode).unwrap();
        let via_resolved =
            predict_next_symbol(&g, g.key(resolved), Fallback::NearestNode).unwrap();
        assert_eq!(via_state, via_resolved);
        assert_eq!(via_state, vec![(2, 1.0)]);
    }

    #[test]
    fn absent_state_resolving_to_a_sink_repeats_its_own_symbol() {
        // Nodes 1, 2, 3 with 3 a sink; absent symbol 5 resolves to 3, but
        // repeat-last keeps the queried state's own last symbol.
        let g = graph_from_symbols(vec![vec![1, 2, 3]], vec![5], 2);
        let dist =
            predict_next_symbol(&g, &NodeKey::new(1, vec![5]), Fallback::RepeatLast).unwrap();
        assert_eq!(dist, vec![(5, 1.0)]);
    }

    #[test]
    fn unresolvable_dimension_is_reported() {
        let g = graph_from_symbols(vec![vec![1, 2, 1]], vec![2], 2);
        let err =
            predict_next_symbol(&g, &NodeKey::new(7, vec![1]), Fallback::NearestNode).unwrap_err();
        assert!(matches!(err, ForecastError::UnresolvableState { .. }));
    }

    /// A noiseless square wave with period 2 and k = 3: every (k−1)-state
    /// determines its successor uniquely, so the greedy forecast reproduces
    /// the wave within half a bin width.
    #[test]
    fn greedy_forecast_reproduces_a_periodic_series() {
        let lo = 0.0;
        let hi = 10.0;
        let n = 40;
        let series: Vec<f64> = (0..n).map(|t| if t % 2 == 0 { lo } else { hi }).collect();
        let raw = TimeSeriesDataset::new(vec![series.clone()], vec!["w".into()], None).unwrap();
        let disc = Discretizer::fit_uniform(&raw, &[4]).unwrap();
        let discrete = disc.apply(&raw).unwrap();
        let g = Mdbg::build(&raw, &discrete, 3).unwrap();

        let window = QueryWindow::from_raw(vec![series[..8].to_vec()], &disc).unwrap();
        let horizon = 8;
        let cfg = ForecastConfig {
            horizon,
            mode: ForecastMode::Greedy,
            fallback: Fallback::NearestNode,
        };
        let pred = forecast(&g, &disc, &window, &cfg).unwrap();
        assert_eq!(pred.len(), 1);
        assert_eq!(pred[0].len(), horizon);
        let half_bin = (hi - lo) / 4.0 / 2.0;
        for (step, &p) in pred[0].iter().enumerate() {
            let truth = if (8 + step) % 2 == 0 { lo } else { hi };
            assert!(
                (p - truth).abs() <= half_bin + 1e-12,
                "step {step}: predicted {p}, truth {truth}"
            );
        }

        // The forecaster must beat repeating the window's last value.
        let truth: Vec<f64> = (8..8 + horizon)
            .map(|t| if t % 2 == 0 { lo } else { hi })
            .collect();
        let repeat = vec![series[7]; horizon];
        assert!(mse(&truth, &pred[0]).unwrap() < mse(&truth, &repeat).unwrap());
    }

    #[test]
    fn constant_series_forecasts_its_bin_center() {
        let raw = TimeSeriesDataset::new(vec![vec![5.5; 20]], vec!["c".into()], None).unwrap();
        let disc = Discretizer::fit_uniform(&raw, &[8]).unwrap(); // collapses to 1 bin
        let discrete = disc.apply(&raw).unwrap();
        let g = Mdbg::build(&raw, &discrete, 4).unwrap();
        let window = QueryWindow::from_raw(vec![vec![5.5; 6]], &disc).unwrap();
        let cfg = ForecastConfig {
            horizon: 5,
            ..ForecastConfig::default()
        };
        let pred = forecast(&g, &disc, &window, &cfg).unwrap();
        assert_eq!(pred[0], vec![5.5; 5]);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let g = graph_from_symbols(vec![vec![1, 2, 1]], vec![2], 2);
        let raw = TimeSeriesDataset::new(
            vec![vec![1.0, 2.0, 1.0]],
            vec!["d0".into()],
            None,
        )
        .unwrap();
        let disc = Discretizer::fit_uniform(&raw, &[2]).unwrap();
        let window = QueryWindow::from_symbols(vec![vec![1, 2]]);
        let cfg = ForecastConfig {
            horizon: 0,
            ..ForecastConfig::default()
        };
        assert!(matches!(
            forecast(&g, &disc, &window, &cfg),
            Err(ForecastError::InvalidHorizon)
        ));
    }

    #[test]
    fn expected_mode_stays_within_the_training_range() {
        let series: Vec<f64> = (0..60)
            .map(|t| (t as f64 * 0.7).sin() * 3.0 + (t % 5) as f64)
            .collect();
        let (lo, hi) = series
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let raw = TimeSeriesDataset::new(vec![series.clone()], vec!["s".into()], None).unwrap();
        let disc = Discretizer::fit_uniform(&raw, &[6]).unwrap();
        let discrete = disc.apply(&raw).unwrap();
        let g = Mdbg::build(&raw, &discrete, 3).unwrap();
        let window = QueryWindow::from_raw(vec![series[..10].to_vec()], &disc).unwrap();
        let cfg = ForecastConfig {
            horizon: 30,
            mode: ForecastMode::Expected,
            fallback: Fallback::NearestNode,
        };
        let pred = forecast(&g, &disc, &window, &cfg).unwrap();
        for &v in &pred[0] {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn greedy_mode_is_deterministic() {
        let series: Vec<f64> = (0..50).map(|t| ((t * t) % 11) as f64).collect();
        let raw = TimeSeriesDataset::new(vec![series.clone()], vec!["s".into()], None).unwrap();
        let disc = Discretizer::fit_uniform(&raw, &[5]).unwrap();
        let discrete = disc.apply(&raw).unwrap();
        let g = Mdbg::build(&raw, &discrete, 3).unwrap();
        let window = QueryWindow::from_raw(vec![series[..6].to_vec()], &disc).unwrap();
        let cfg = ForecastConfig {
            horizon: 12,
            ..ForecastConfig::default()
        };
        let a = forecast(&g, &disc, &window, &cfg).unwrap();
        let b = forecast(&g, &disc, &window, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_metrics_match_hand_computation() {
        let truth = [1.0, 3.0];
        let pred = [2.0, 5.0];
        assert!((mse(&truth, &pred).unwrap() - 2.5).abs() < 1e-15);
        assert!((mae(&truth, &pred).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(
            mse(&truth, &pred[..1]),
            Err(ForecastError::ShapeMismatch { left: 2, right: 1 })
        ));
    }
}

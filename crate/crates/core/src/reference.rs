//! Naive reference implementations used as oracles by the test suites and
//! the CLI self-test.
//!
//! Everything here favors obviousness over speed and deliberately shares no
//! code with the optimized paths it checks: the graph builder materializes
//! every window position explicitly, the PPR oracle inverts the dense system
//! with Gauss–Jordan elimination, and nearest-node lookup is an exhaustive
//! scan. Inputs are small by design.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::discretize::{DiscreteDataset, Discretizer};
use crate::graph::{BuildOptions, HyperWeighting, Mdbg, NodeId, NodeKey, RawTuple};
use crate::ingest::TimeSeriesDataset;

/// A graph in canonical, id-free form: everything keyed by [`NodeKey`], so
/// two constructions can be compared regardless of id assignment order.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveGraph {
    pub nodes: BTreeSet<NodeKey>,
    /// Directed sequential edges with occurrence weights.
    pub seq: BTreeMap<(NodeKey, NodeKey), u64>,
    /// Undirected hyper edges, keyed with the smaller key first.
    pub hyper: BTreeMap<(NodeKey, NodeKey), u64>,
    pub features: BTreeMap<NodeKey, BTreeMap<RawTuple, u64>>,
}

/// Brute-force MdBG construction by explicit enumeration.
///
/// Sequential edges: one sweep over every k-tuple. Nodes, features and
/// hyper cliques: one sweep over every (k−1)-window position, which is
/// exactly the schedule the optimized builder realizes through its prefix/
/// suffix bookkeeping (prefix clique at t = 0, suffix cliques every step).
pub fn naive_build(
    raw: &TimeSeriesDataset,
    disc: &DiscreteDataset,
    k: usize,
    opts: &BuildOptions,
) -> NaiveGraph {
    assert!(k >= 2 && raw.len() >= k, "oracle requires valid shapes");
    let dims = raw.dims();
    let s = raw.len();
    let key_at = |i: usize, p: usize| NodeKey::new(i as u16 + 1, disc.symbols[i][p..p + k - 1].to_vec());

    let mut g = NaiveGraph {
        nodes: BTreeSet::new(),
        seq: BTreeMap::new(),
        hyper: BTreeMap::new(),
        features: BTreeMap::new(),
    };

    // Every k-tuple is one directed edge occurrence.
    for i in 0..dims {
        for t in 0..=s - k {
            let src = key_at(i, t);
            let dst = key_at(i, t + 1);
            *g.seq.entry((src, dst)).or_insert(0) += 1;
        }
    }

    // Every (k−1)-window position contributes one node occurrence, one raw
    // feature slice, and one cross-dimension clique.
    for p in 0..=s - (k - 1) {
        let position_keys: Vec<NodeKey> = (0..dims).map(|i| key_at(i, p)).collect();
        for (i, node) in position_keys.iter().enumerate() {
            g.nodes.insert(node.clone());
            let set = g.features.entry(node.clone()).or_default();
            let tuple = RawTuple(raw.values[i][p..p + k - 1].to_vec());
            if let Some(c) = set.get_mut(&tuple) {
                *c += 1;
            } else if opts.feature_cap.is_none_or(|cap| set.len() < cap) {
                set.insert(tuple, 1);
            }
        }
        for i in 0..dims {
            for j in i + 1..dims {
                let (a, b) = if position_keys[i] < position_keys[j] {
                    (position_keys[i].clone(), position_keys[j].clone())
                } else {
                    (position_keys[j].clone(), position_keys[i].clone())
                };
                match opts.hyper_weighting {
                    HyperWeighting::Count => *g.hyper.entry((a, b)).or_insert(0) += 1,
                    HyperWeighting::Binary => {
                        g.hyper.entry((a, b)).or_insert(1);
                    }
                }
            }
        }
    }
    g
}

/// Projects a built [`Mdbg`] into the same canonical form for comparison.
pub fn canonical_form(g: &Mdbg) -> NaiveGraph {
    let nodes: BTreeSet<NodeKey> = g.keys().iter().cloned().collect();
    let seq = g
        .seq_edge_triples()
        .map(|(s, d, w)| ((g.key(s).clone(), g.key(d).clone()), w))
        .collect();
    let hyper = g
        .hyper_edge_triples()
        .map(|(a, b, w)| {
            let (ka, kb) = (g.key(a).clone(), g.key(b).clone());
            if ka < kb { ((ka, kb), w) } else { ((kb, ka), w) }
        })
        .collect();
    let features = (0..g.node_count() as NodeId)
        .map(|id| (g.key(id).clone(), g.feature_multiset(id).clone()))
        .collect();
    NaiveGraph {
        nodes,
        seq,
        hyper,
        features,
    }
}

/// Gauss–Jordan inversion with partial pivoting. Returns `None` for
/// (numerically) singular input. Quadratic memory, cubic time — oracle use
/// only.
pub fn dense_invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    // Augmented [M | I].
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), n, "matrix must be square");
            let mut r = row.clone();
            r.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for v in &mut a[col] {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col];
            if factor == 0.0 {
                continue;
            }
            let (pivot_row, other) = if row < col {
                let (lo, hi) = a.split_at_mut(col);
                (&hi[0], &mut lo[row])
            } else {
                let (lo, hi) = a.split_at_mut(row);
                (&lo[col], &mut hi[0])
            };
            for j in 0..2 * n {
                other[j] -= factor * pivot_row[j];
            }
        }
    }
    Some(a.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// Direct dense personalized-PageRank solve: `Π = c · (I − (1−c)·T)^{-1}`,
/// where row `s` of `Π` solves `π = c·e_s + (1−c)·π·T`.
pub fn dense_ppr(t: &[Vec<f64>], teleport: f64) -> Vec<Vec<f64>> {
    let n = t.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = f64::from(u8::from(i == j)) - (1.0 - teleport) * t[i][j];
        }
    }
    let inv = dense_invert(&m).expect("I - (1-c)T is invertible for c in (0,1]");
    inv.into_iter()
        .map(|row| row.into_iter().map(|v| teleport * v).collect())
        .collect()
}

/// Exhaustive same-dimension L1 scan: the contract for nearest-node
/// resolution. Ties go to the lexicographically smallest symbol tuple.
/// Returns `(id, distance, exact)` or `None` when the dimension is empty.
pub fn nearest_by_scan(g: &Mdbg, query: &NodeKey) -> Option<(NodeId, u64, bool)> {
    let mut best: Option<(u64, &NodeKey, NodeId)> = None;
    for &id in g.dim_node_ids(query.dim) {
        let key = g.key(id);
        let dist: u64 = key
            .symbols
            .iter()
            .zip(&query.symbols)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum();
        let better = match &best {
            None => true,
            Some((d, k, _)) => dist < *d || (dist == *d && key.symbols < k.symbols),
        };
        if better {
            best = Some((dist, key, id));
        }
    }
    best.map(|(d, _, id)| (id, d, d == 0))
}

/// Random construction instance within the oracle envelope: D ≤ 3, S ≤ 50,
/// α ≤ 5, k ∈ {2,3,4}. Raw values are drawn from a small grid so duplicate
/// feature tuples (and therefore multiset counts > 1) occur often.
pub fn random_instance<R: Rng>(rng: &mut R) -> (TimeSeriesDataset, DiscreteDataset, usize) {
    let k = rng.random_range(2..=4usize);
    let dims = rng.random_range(1..=3usize);
    let s = rng.random_range(k..=50usize);
    let alphabet_sizes: Vec<u16> = (0..dims).map(|_| rng.random_range(1..=5)).collect();
    let symbols: Vec<Vec<u16>> = alphabet_sizes
        .iter()
        .map(|&a| (0..s).map(|_| rng.random_range(1..=a)).collect())
        .collect();
    let values: Vec<Vec<f64>> = (0..dims)
        .map(|_| (0..s).map(|_| f64::from(rng.random_range(-6..=6)) * 0.5).collect())
        .collect();
    let raw = TimeSeriesDataset::new(
        values,
        (0..dims).map(|i| format!("d{i}")).collect(),
        None,
    )
    .expect("generated dataset is valid");
    let disc = DiscreteDataset {
        symbols,
        alphabet_sizes,
    };
    (raw, disc, k)
}

/// Random instance whose discrete side really is the fitted uniform
/// discretization of the raw side, for properties that need the pair to be
/// consistent (feature containment, masking end to end).
pub fn random_fitted_instance<R: Rng>(
    rng: &mut R,
) -> (TimeSeriesDataset, Discretizer, DiscreteDataset, usize) {
    let k = rng.random_range(2..=4usize);
    let dims = rng.random_range(1..=3usize);
    let s = rng.random_range(k.max(2)..=50usize);
    let alphabets: Vec<u16> = (0..dims).map(|_| rng.random_range(1..=5)).collect();
    let values: Vec<Vec<f64>> = (0..dims)
        .map(|_| (0..s).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let raw = TimeSeriesDataset::new(
        values,
        (0..dims).map(|i| format!("d{i}")).collect(),
        None,
    )
    .expect("generated dataset is valid");
    let disc = Discretizer::fit_uniform(&raw, &alphabets).expect("fit succeeds");
    let discrete = disc.apply(&raw).expect("apply succeeds");
    (raw, disc, discrete, k)
}

/// Random row-stochastic transition matrix over up to `max_n` nodes, with
/// roughly 15% density; empty rows become self-loops before normalization.
pub fn random_transition<R: Rng>(rng: &mut R, max_n: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=max_n);
    let mut t = vec![vec![0.0; n]; n];
    for row in t.iter_mut() {
        for v in row.iter_mut() {
            if rng.random_bool(0.15) {
                *v = rng.random_range(0.1..5.0);
            }
        }
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            continue;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    for (i, row) in t.iter_mut().enumerate() {
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            row[i] = 1.0;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn naive_build_agrees_with_hand_enumeration() {
        // Same instance as the graph module's univariate test.
        let raw = TimeSeriesDataset::new(
            vec![vec![1.0, 2.0, 1.0, 2.0, 1.0]],
            vec!["a".into()],
            None,
        )
        .unwrap();
        let disc = DiscreteDataset {
            symbols: vec![vec![1, 2, 1, 2, 1]],
            alphabet_sizes: vec![2],
        };
        let g = naive_build(&raw, &disc, 3, &BuildOptions::default());
        assert_eq!(g.nodes.len(), 2);
        let a = NodeKey::new(1, vec![1, 2]);
        let b = NodeKey::new(1, vec![2, 1]);
        assert_eq!(g.seq.get(&(a.clone(), b.clone())), Some(&2));
        assert_eq!(g.seq.get(&(b.clone(), a.clone())), Some(&1));
        assert!(g.hyper.is_empty());
        assert_eq!(g.features[&a].values().sum::<u64>(), 2);
    }

    #[test]
    fn dense_invert_recovers_known_inverse() {
        // [[2,0],[0,4]]^{-1} = [[0.5,0],[0,0.25]]
        let inv = dense_invert(&[vec![2.0, 0.0], vec![0.0, 4.0]]).expect("invertible");
        assert_eq!(inv, vec![vec![0.5, 0.0], vec![0.0, 0.25]]);
        // Permutation needs pivoting.
        let inv = dense_invert(&[vec![0.0, 1.0], vec![1.0, 0.0]]).expect("invertible");
        assert_eq!(inv, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(dense_invert(&[vec![1.0, 2.0], vec![2.0, 4.0]]).is_none());
    }

    #[test]
    fn dense_invert_times_original_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = random_transition(&mut rng, 30);
            let n = t.len();
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f64::from(u8::from(i == j)) - 0.85 * t[i][j];
                }
            }
            let inv = dense_invert(&m).expect("diagonally dominant");
            for (i, m_row) in m.iter().enumerate() {
                for j in 0..n {
                    let prod: f64 = m_row.iter().zip(&inv).map(|(a, r)| a * r[j]).sum();
                    let expect = f64::from(u8::from(i == j));
                    assert!((prod - expect).abs() < 1e-9, "M*M^-1 deviates at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn dense_ppr_matches_two_node_closed_form() {
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let p = dense_ppr(&t, 0.15);
        let scale = 0.15 / (1.0 - 0.85 * 0.85);
        assert!((p[0][0] - scale).abs() < 1e-12);
        assert!((p[0][1] - scale * 0.85).abs() < 1e-12);
        assert!((p[1][0] - scale * 0.85).abs() < 1e-12);
        assert!((p[1][1] - scale).abs() < 1e-12);
    }

    #[test]
    fn nearest_scan_prefers_smaller_tuple_on_ties() {
        let raw = TimeSeriesDataset::new(
            vec![vec![1.0, 1.0, 3.0, 1.0, 1.0]],
            vec!["a".into()],
            None,
        )
        .unwrap();
        let disc = DiscreteDataset {
            symbols: vec![vec![1, 1, 3, 1, 1]],
            alphabet_sizes: vec![3],
        };
        let g = Mdbg::build(&raw, &disc, 3).unwrap();
        // Nodes present: (1,1), (1,3), (3,1). Query (1,2) is at distance 1
        // from both (1,1) and (1,3); the smaller tuple must win.
        let (id, dist, exact) =
            nearest_by_scan(&g, &NodeKey::new(1, vec![1, 2])).expect("dimension populated");
        assert_eq!(g.key(id).symbols, vec![1, 1]);
        assert_eq!(dist, 1);
        assert!(!exact);
    }
}

//! Per-dimension discretization of continuous series into symbol alphabets.
//!
//! Each dimension `i` gets an independent table of `α_i - 1` sorted bin
//! edges fitted on the training split. The boundary rule is fixed: a value
//! equal to an edge belongs to the upper bin, i.e. `symbol = 1 + #{edges <=
//! value}`. Test-time values outside the training range clamp into the
//! outermost bins rather than erroring, because queries are entitled to
//! contain unseen values.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::TimeSeriesDataset;

/// Errors raised while fitting or applying discretizers.
#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("dimension {dim}: bin edges are not strictly increasing")]
    DegenerateRange { dim: usize },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("dimension count mismatch: discretizer has {expected}, dataset has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension index {dim} out of range for {dims} dimensions")]
    DimOutOfRange { dim: usize, dims: usize },
    #[error("symbol {symbol} out of range 1..={alpha}")]
    SymbolOutOfRange { symbol: u16, alpha: u16 },
    #[error("dimension {dim}: alphabet size must be at least 1")]
    InvalidAlphabet { dim: usize },
    #[error("malformed discretizer table: {0}")]
    MalformedTable(String),
}

pub type DiscretizeResult<T> = Result<T, DiscretizeError>;

/// How bin edges are chosen from training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Equal-width bins spanning the training min..max range (the default).
    Uniform,
    /// Equal-mass bins at empirical quantiles; duplicate quantiles collapse.
    Quantile,
}

/// Fitted binning table for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimBins {
    /// Effective alphabet size; symbols live in `{1..alpha}`.
    pub alpha: u16,
    /// Strictly increasing thresholds; always exactly `alpha - 1` of them.
    pub edges: Vec<f64>,
    pub strategy: Strategy,
    /// Training range, kept for bin centers and provenance.
    pub train_min: f64,
    pub train_max: f64,
}

/// Per-dimension discretization functions mapping reals to symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub dims: Vec<DimBins>,
}

/// A discretized dataset: `D x S` symbols plus the alphabet each row uses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    /// `symbols[i][t]` in `{1..alphabet_sizes[i]}`.
    pub symbols: Vec<Vec<u16>>,
    pub alphabet_sizes: Vec<u16>,
}

impl DiscreteDataset {
    pub fn dims(&self) -> usize {
        self.symbols.len()
    }

    pub fn len(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds strictly increasing edges out of a candidate list, collapsing
/// duplicates. Returns the surviving edges; the effective alphabet is
/// `edges.len() + 1`.
fn dedupe_edges(candidates: Vec<f64>) -> Vec<f64> {
    let mut edges: Vec<f64> = Vec::with_capacity(candidates.len());
    for e in candidates {
        if edges.last().is_none_or(|last| e > *last) {
            edges.push(e);
        }
    }
    edges
}

impl Discretizer {
    /// Fits equal-width bins per dimension: edges at `m + j*(M-m)/α` for
    /// `j = 1..α-1` where `[m, M]` is the training range of that dimension.
    ///
    /// A constant dimension cannot support more than one bin; it falls back
    /// to a single-symbol alphabet with a warning instead of failing, so a
    /// flat sensor column does not abort a whole pipeline.
    pub fn fit_uniform(
        train: &TimeSeriesDataset,
        alphabets: &[u16],
    ) -> DiscretizeResult<Discretizer> {
        Self::fit(train, alphabets, Strategy::Uniform)
    }

    /// Fits equal-mass bins at empirical quantiles `j/α`. Heavy value
    /// repetition can make quantiles coincide; duplicates collapse with a
    /// warning, shrinking the effective alphabet.
    pub fn fit_quantile(
        train: &TimeSeriesDataset,
        alphabets: &[u16],
    ) -> DiscretizeResult<Discretizer> {
        Self::fit(train, alphabets, Strategy::Quantile)
    }

    fn fit(
        train: &TimeSeriesDataset,
        alphabets: &[u16],
        strategy: Strategy,
    ) -> DiscretizeResult<Discretizer> {
        if train.is_empty() {
            return Err(DiscretizeError::EmptyTrain);
        }
        if alphabets.len() != train.dims() {
            return Err(DiscretizeError::DimensionMismatch {
                expected: alphabets.len(),
                found: train.dims(),
            });
        }
        let mut dims = Vec::with_capacity(train.dims());
        for (i, (row, &alpha)) in train.values.iter().zip(alphabets).enumerate() {
            if alpha == 0 {
                return Err(DiscretizeError::InvalidAlphabet { dim: i });
            }
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if min == max && alpha > 1 {
                log::warn!(
                    "dimension {} ({}) is constant at {}; falling back to a single bin",
                    i,
                    train.dim_names[i],
                    min
                );
                dims.push(DimBins {
                    alpha: 1,
                    edges: Vec::new(),
                    strategy,
                    train_min: min,
                    train_max: max,
                });
                continue;
            }
            let candidates: Vec<f64> = match strategy {
                Strategy::Uniform => (1..alpha)
                    .map(|j| min + f64::from(j) * (max - min) / f64::from(alpha))
                    .collect(),
                Strategy::Quantile => {
                    let mut sorted = row.clone();
                    sorted.sort_by(f64::total_cmp);
                    (1..alpha)
                        .map(|j| {
                            // Linear interpolation between order statistics.
                            let pos = f64::from(j) / f64::from(alpha)
                                * (sorted.len() - 1) as f64;
                            let lo = pos.floor() as usize;
                            let hi = pos.ceil() as usize;
                            let frac = pos - lo as f64;
                            sorted[lo] + frac * (sorted[hi] - sorted[lo])
                        })
                        .collect()
                }
            };
            let edges = dedupe_edges(candidates);
            let effective = edges.len() as u16 + 1;
            if effective != alpha {
                log::warn!(
                    "dimension {} ({}): {} of {} requested bins are distinguishable",
                    i,
                    train.dim_names[i],
                    effective,
                    alpha
                );
            }
            dims.push(DimBins {
                alpha: effective,
                edges,
                strategy,
                train_min: min,
                train_max: max,
            });
        }
        Ok(Discretizer { dims })
    }

    /// Number of dimensions the table covers.
    pub fn dims(&self) -> usize {
        self.dims.len()
    }

    /// Effective alphabet sizes, one per dimension.
    pub fn alphabet_sizes(&self) -> Vec<u16> {
        self.dims.iter().map(|d| d.alpha).collect()
    }

    /// Symbol for a single value of dimension `dim` (0-based index).
    /// A value equal to an edge lands in the upper bin; values outside the
    /// training range clamp into the outermost bins.
    pub fn symbol_for(&self, dim: usize, value: f64) -> DiscretizeResult<u16> {
        let bins = self.dims.get(dim).ok_or(DiscretizeError::DimOutOfRange {
            dim,
            dims: self.dims.len(),
        })?;
        Ok(bins.edges.partition_point(|e| *e <= value) as u16 + 1)
    }

    /// Discretizes a whole dataset; it must have the fitted dimension count.
    pub fn apply(&self, ds: &TimeSeriesDataset) -> DiscretizeResult<DiscreteDataset> {
        if ds.dims() != self.dims.len() {
            return Err(DiscretizeError::DimensionMismatch {
                expected: self.dims.len(),
                found: ds.dims(),
            });
        }
        let symbols = ds
            .values
            .iter()
            .zip(&self.dims)
            .map(|(row, bins)| {
                row.iter()
                    .map(|v| bins.edges.partition_point(|e| *e <= *v) as u16 + 1)
                    .collect()
            })
            .collect();
        Ok(DiscreteDataset {
            symbols,
            alphabet_sizes: self.alphabet_sizes(),
        })
    }

    /// Midpoint of a symbol's bin; the outermost bins are bounded by the
    /// training min/max, so every center lies inside the training range.
    pub fn bin_center(&self, dim: usize, symbol: u16) -> DiscretizeResult<f64> {
        let bins = self.dims.get(dim).ok_or(DiscretizeError::DimOutOfRange {
            dim,
            dims: self.dims.len(),
        })?;
        if symbol == 0 || symbol > bins.alpha {
            return Err(DiscretizeError::SymbolOutOfRange {
                symbol,
                alpha: bins.alpha,
            });
        }
        let lo = if symbol == 1 {
            bins.train_min
        } else {
            bins.edges[symbol as usize - 2]
        };
        let hi = if symbol == bins.alpha {
            bins.train_max
        } else {
            bins.edges[symbol as usize - 1]
        };
        Ok((lo + hi) / 2.0)
    }

    /// Canonical JSON form: a fixed field order and a trailing newline, so
    /// identical tables serialize to identical bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("discretizer serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Parses and validates a table: per dimension the edges must be
    /// strictly increasing and exactly `alpha - 1` long.
    pub fn from_json_bytes(bytes: &[u8]) -> DiscretizeResult<Discretizer> {
        let d: Discretizer = serde_json::from_slice(bytes)
            .map_err(|e| DiscretizeError::MalformedTable(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> DiscretizeResult<()> {
        for (i, bins) in self.dims.iter().enumerate() {
            if bins.alpha == 0 {
                return Err(DiscretizeError::InvalidAlphabet { dim: i });
            }
            if bins.edges.len() != bins.alpha as usize - 1 {
                return Err(DiscretizeError::MalformedTable(format!(
                    "dimension {}: {} edges for alphabet size {}",
                    i,
                    bins.edges.len(),
                    bins.alpha
                )));
            }
            if bins.edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DiscretizeError::DegenerateRange { dim: i });
            }
            if bins.edges.iter().any(|e| !e.is_finite()) {
                return Err(DiscretizeError::MalformedTable(format!(
                    "dimension {i}: non-finite edge"
                )));
            }
        }
        Ok(())
    }

    /// Content hash of the canonical JSON form, recorded in graph manifests
    /// so artifacts can be tied back to the exact table that produced them.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

//! CSV ingestion and chronological train/validation/test partitioning.
//!
//! Datasets are stored dimension-major (`D` rows of `S` values each) so that
//! per-dimension scans — the hot path of discretization and graph
//! construction — walk contiguous memory. Splitting is purely positional:
//! `train = [0, train_end)`, `val = [train_end - val_overlap, val_end)`,
//! `test = [val_end - test_overlap, S)`. The overlap prefixes exist so that
//! sliding windows crossing a border still have full context; removing them
//! and concatenating the three parts reconstructs the original series
//! bitwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading or partitioning datasets.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRows {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse {text:?} as a finite number")]
    NonNumericValue {
        line: u64,
        column: usize,
        text: String,
    },
    #[error("file contains no data rows or no numeric columns")]
    EmptyDataset,
    #[error("split spec out of range: {0}")]
    SpecOutOfRange(String),
    #[error("split of length {split_len} is too short for input length {input_len} plus horizon {horizon}")]
    TooShort {
        split_len: usize,
        input_len: usize,
        horizon: usize,
    },
    #[error("dimension count mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type IngestResult<T> = Result<T, IngestError>;

/// An aligned multivariate time series: `D` dimensions over `S` time steps.
///
/// Invariants: every dimension row has identical length, `D >= 1`, and all
/// values are finite. [`load_csv`] enforces these at the boundary; internal
/// operations (splits) preserve them.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    /// Dimension-major values: `values[i][t]` is dimension `i` at step `t`.
    pub values: Vec<Vec<f64>>,
    /// One name per dimension, taken from the CSV header.
    pub dim_names: Vec<String>,
    /// Original timestamp strings, if the source file carried them.
    pub timestamps: Option<Vec<String>>,
}

impl TimeSeriesDataset {
    /// Validating constructor: rows must be equally long, non-finite values
    /// are rejected, and at least one dimension must be present.
    pub fn new(
        values: Vec<Vec<f64>>,
        dim_names: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> IngestResult<Self> {
        if values.is_empty() {
            return Err(IngestError::EmptyDataset);
        }
        if dim_names.len() != values.len() {
            return Err(IngestError::DimensionMismatch {
                expected: values.len(),
                found: dim_names.len(),
            });
        }
        let s = values[0].len();
        for (i, row) in values.iter().enumerate() {
            if row.len() != s {
                return Err(IngestError::RaggedRows {
                    line: i as u64 + 1,
                    expected: s,
                    found: row.len(),
                });
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::NonNumericValue {
                    line: t as u64 + 1,
                    column: i + 1,
                    text: row[t].to_string(),
                });
            }
        }
        if let Some(ts) = &timestamps {
            if ts.len() != s {
                return Err(IngestError::RaggedRows {
                    line: 0,
                    expected: s,
                    found: ts.len(),
                });
            }
        }
        Ok(Self {
            values,
            dim_names,
            timestamps,
        })
    }

    /// Number of dimensions `D`.
    pub fn dims(&self) -> usize {
        self.values.len()
    }

    /// Number of time steps `S`.
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the column range `[start, end)` with names and timestamps.
    pub fn slice_cols(&self, start: usize, end: usize) -> TimeSeriesDataset {
        TimeSeriesDataset {
            values: self.values.iter().map(|row| row[start..end].to_vec()).collect(),
            dim_names: self.dim_names.clone(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[start..end].to_vec()),
        }
    }
}

/// Chronological split borders. Overlaps are trailing train steps prepended
/// to the validation/test parts so border-crossing windows keep full context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train covers columns `[0, train_end)`.
    pub train_end: usize,
    /// Validation covers `[train_end - val_overlap, val_end)`.
    pub val_end: usize,
    pub val_overlap: usize,
    pub test_overlap: usize,
}

impl SplitSpec {
    /// Borders with a shared overlap on both validation and test.
    pub fn new(train_end: usize, val_end: usize, overlap: usize) -> Self {
        Self {
            train_end,
            val_end,
            val_overlap: overlap,
            test_overlap: overlap,
        }
    }

    /// Benchmark convention for the hourly ETT datasets: 8,640 train steps,
    /// 2,880 validation steps, overlap equal to the usual input length 12.
    pub fn etth() -> Self {
        Self::new(8_640, 11_520, 12)
    }

    /// Benchmark convention for the quarter-hourly ETT datasets:
    /// 34,560 / 11,520 / 11,520 with overlap 12.
    pub fn ettm() -> Self {
        Self::new(34_560, 46_080, 12)
    }

    fn validate(&self, s: usize) -> IngestResult<()> {
        if self.train_end == 0 {
            return Err(IngestError::SpecOutOfRange("train_end must be positive".into()));
        }
        if self.train_end > self.val_end {
            return Err(IngestError::SpecOutOfRange(format!(
                "train_end {} exceeds val_end {}",
                self.train_end, self.val_end
            )));
        }
        if self.val_end > s {
            return Err(IngestError::SpecOutOfRange(format!(
                "val_end {} exceeds series length {}",
                self.val_end, s
            )));
        }
        if self.val_overlap > self.train_end || self.test_overlap > self.train_end {
            return Err(IngestError::SpecOutOfRange(format!(
                "overlaps ({}, {}) must not exceed train_end {}",
                self.val_overlap, self.test_overlap, self.train_end
            )));
        }
        Ok(())
    }
}

/// Loads an aligned multivariate series from a headered CSV file.
///
/// When `has_timestamp_column` is set, the first column is kept verbatim as
/// a timestamp string and all remaining columns must be numeric. Every data
/// row must carry exactly as many fields as the header; every numeric field
/// must parse to a finite `f64` (NaN/infinity count as missing data and are
/// rejected).
pub fn load_csv(path: &Path, has_timestamp_column: bool) -> IngestResult<TimeSeriesDataset> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;

    let header = reader
        .headers()
        .map_err(|e| IngestError::Io(std::io::Error::other(e)))?
        .clone();
    let field_count = header.len();
    let skip = usize::from(has_timestamp_column);
    if field_count <= skip {
        return Err(IngestError::EmptyDataset);
    }
    let dims = field_count - skip;
    let dim_names: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); dims];
    let mut timestamps: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != field_count {
            return Err(IngestError::RaggedRows {
                line,
                expected: field_count,
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if has_timestamp_column && j == 0 {
                timestamps.push(field.to_string());
                continue;
            }
            let parsed = field.parse::<f64>().ok().filter(|v| v.is_finite());
            match parsed {
                Some(v) => values[j - skip].push(v),
                None => {
                    return Err(IngestError::NonNumericValue {
                        line,
                        column: j + 1,
                        text: field.to_string(),
                    })
                }
            }
        }
    }
    if values[0].is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok(TimeSeriesDataset {
        values,
        dim_names,
        timestamps: has_timestamp_column.then_some(timestamps),
    })
}

/// Writes a dataset back to CSV. Floats use Rust's shortest round-tripping
/// representation, so `load_csv(write_csv(load_csv(f)))` is bitwise
/// idempotent on values.
pub fn write_csv(ds: &TimeSeriesDataset, path: &Path) -> IngestResult<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
    let mut header: Vec<String> = Vec::with_capacity(ds.dims() + 1);
    if ds.timestamps.is_some() {
        header.push("date".to_string());
    }
    header.extend(ds.dim_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for t in 0..ds.len() {
        row.clear();
        if let Some(ts) = &ds.timestamps {
            row.push(ts[t].clone());
        }
        for dim in &ds.values {
            row.push(dim[t].to_string());
        }
        writer
            .write_record(&row)
            .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
    }
    writer
        .flush()
        .map_err(IngestError::Io)?;
    Ok(())
}

/// Splits a dataset chronologically into (train, validation, test).
///
/// Graph construction downstream must use the train part only; the overlap
/// prefixes on validation/test exist solely so window extraction near the
/// borders sees a full input length.
pub fn split(
    ds: &TimeSeriesDataset,
    spec: &SplitSpec,
) -> IngestResult<(TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset)> {
    spec.validate(ds.len())?;
    let train = ds.slice_cols(0, spec.train_end);
    let val = ds.slice_cols(spec.train_end - spec.val_overlap, spec.val_end);
    let test = ds.slice_cols(spec.val_end - spec.test_overlap, ds.len());
    Ok((train, val, test))
}

/// Number of complete (input, horizon) windows in a split of `split_len`
/// steps: `split_len - input_len - horizon + 1`.
pub fn window_count(split_len: usize, input_len: usize, horizon: usize) -> IngestResult<usize> {
    if split_len < input_len + horizon {
        return Err(IngestError::TooShort {
            split_len,
            input_len,
            horizon,
        });
    }
    Ok(split_len - input_len - horizon + 1)
}

/// Per-dimension standardization statistics fitted on a training split.
///
/// Discretization operates on raw values by default; this pre-pass exists
/// only for exported-artifact parity with pipelines that standardize first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ZScore {
    /// Fits population mean/standard deviation per dimension. Constant
    /// dimensions get a unit scale (and a warning) so apply stays total.
    pub fn fit(train: &TimeSeriesDataset) -> ZScore {
        let n = train.len() as f64;
        let mut means = Vec::with_capacity(train.dims());
        let mut stds = Vec::with_capacity(train.dims());
        for (i, row) in train.values.iter().enumerate() {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                log::warn!("dimension {} ({}) is constant; z-score leaves it unscaled", i, train.dim_names[i]);
            }
            means.push(mean);
            stds.push(if std == 0.0 { 1.0 } else { std });
        }
        ZScore { means, stds }
    }

    /// Applies `(x - mean) / std` per dimension.
    pub fn apply(&self, ds: &TimeSeriesDataset) -> IngestResult<TimeSeriesDataset> {
        if ds.dims() != self.means.len() {
            return Err(IngestError::DimensionMismatch {
                expected: self.means.len(),
                found: ds.dims(),
            });
        }
        let values = ds
            .values
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(row, (&m, &s))| row.iter().map(|v| (v - m) / s).collect())
            .collect();
        Ok(TimeSeriesDataset {
            values,
            dim_names: ds.dim_names.clone(),
            timestamps: ds.timestamps.clone(),
        })
    }
}

/// Locates one of the public ETT benchmark CSVs (`ETTh1.csv`, `ETTm2.csv`,
/// ...) by checking `$ETT_DATA_DIR`, then `./data/ETT-small/`, then the
/// workspace-level `data/ETT-small/`. Returns `None` when the file is not
/// present; callers treat that as "benchmark data not installed".
pub fn locate_ett(file_name: &str) -> Option<PathBuf> {
    let mut candidates: Vec<PathBuf> = Vec::new();
    if let Ok(dir) = std::env::var("ETT_DATA_DIR") {
        candidates.push(PathBuf::from(dir));
    }
    candidates.push(PathBuf::from("data/ETT-small"));
    // Relative to this crate when running under cargo (unit/integration tests).
    if let Ok(manifest) = std::env::var("CARGO_MANIFEST_DIR") {
        let root = PathBuf::from(manifest);
        candidates.push(root.join("data/ETT-small"));
        candidates.push(root.join("../../data/ETT-small"));
    }
    candidates
        .into_iter()
        .map(|dir| dir.join(file_name))
        .find(|p| p.is_file())
}

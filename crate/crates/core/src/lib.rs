//! Multivariate de Bruijn graphs (MdBGs) over discretized time series.
//!
//! The pipeline: load an aligned multivariate series ([`ingest`]), fit a
//! per-dimension discretizer on the training split ([`discretize`]), build
//! the MdBG — one weighted de Bruijn layer per dimension plus cross-dimension
//! hyper-tuple cliques and per-node raw feature multisets ([`graph`]) —
//! refine it with personalized-PageRank diffusion and top-k sparsification
//! ([`diffusion`]), resolve query windows to node masks and sample node
//! features ([`query`]), and serialize everything to a stable on-disk
//! archive ([`export`]). A symbolic frequency forecaster ([`forecast`])
//! closes the loop end to end without any learned components.
//!
//! [`reference`] holds naive reference implementations (brute-force graph
//! construction, dense PPR solve, exhaustive nearest-node scan) used by the
//! oracle test suites and the `selftest` CLI command; they deliberately share
//! no code with the optimized paths they check.

pub mod diffusion;
pub mod discretize;
pub mod export;
pub mod forecast;
pub mod graph;
pub mod ingest;
pub mod query;
pub mod reference;
pub mod selftest;

pub use diffusion::{DiffusedGraph, DiffusionConfig, Normalization, TransitionMatrix};
pub use discretize::{DiscreteDataset, Discretizer, Strategy};
pub use export::{load, save, GraphManifest, Provenance};
pub use forecast::{Fallback, ForecastConfig, ForecastMode};
pub use graph::{GraphStats, Mdbg, NodeId, NodeKey};
pub use ingest::{SplitSpec, TimeSeriesDataset};
pub use query::{MaskVector, QueryWindow, Resolution, SampleConfig};

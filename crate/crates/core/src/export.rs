//! Stable on-disk archives for graphs, diffusion results, masks and
//! discretizer tables.
//!
//! An archive directory holds `manifest.json` plus CSV files with frozen
//! names and column orders (`nodes.csv`, `edges_seq.csv`, `edges_hyper.csv`,
//! `features.csv`, optionally `diffused.csv` and `discretizer.json`). All
//! rows are sorted by id, floats carry 17 significant digits (lossless for
//! doubles), and the manifest records a SHA-256 digest per file, so saving
//! is byte-stable and loading can detect tampering. Loading re-validates
//! every structural graph invariant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffusion::DiffusedGraph;
use crate::discretize::{DiscretizeError, Discretizer};
use crate::graph::{GraphError, Mdbg, NodeId, NodeKey, RawTuple};
use crate::query::{self, QueryError, QueryWindow};

/// The one archive layout this code reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Errors raised while writing or reading archives.
#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot create or write archive directory {}", .0.display())]
    UnwritableDirectory(PathBuf),
    #[error("archive integrity violated: {0}")]
    IntegrityError(String),
    #[error("archive format version {found} is not supported (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("{file} line {line}: {message}")]
    MalformedRow {
        file: String,
        line: usize,
        message: String,
    },
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("mask batch must contain at least one window")]
    EmptyBatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

pub type ExportResult<T> = Result<T, ExportError>;

/// Where an archive came from: digest of the ingested input file plus the
/// caller's free-form parameter record (e.g. the CLI's resolved config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input_digest: Option<String>,
    pub parameters: serde_json::Value,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            input_digest: None,
            parameters: serde_json::Value::Object(Default::default()),
        }
    }
}

/// Diffusion metadata needed to reconstruct a [`DiffusedGraph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionMeta {
    pub top_k: usize,
    pub renormalized: bool,
}

/// `manifest.json`: format version, structural tallies, parameters and the
/// per-file content digests. Digests are recomputed and checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub format_version: u32,
    pub k: usize,
    pub dims: usize,
    pub alphabet_sizes: Vec<u16>,
    pub series_len: usize,
    pub node_count: usize,
    pub seq_edge_count: usize,
    /// Undirected hyper pair count (each pair reads as two directed edges).
    pub hyper_edge_count: usize,
    pub feature_rows: usize,
    pub diffusion: Option<DiffusionMeta>,
    pub discretizer_digest: Option<String>,
    pub provenance: Provenance,
    pub file_digests: BTreeMap<String, String>,
}

/// Everything an archive directory can hold, reassembled and validated.
#[derive(Debug)]
pub struct LoadedArchive {
    pub graph: Mdbg,
    pub diffused: Option<DiffusedGraph>,
    pub discretizer: Option<Discretizer>,
    pub manifest: GraphManifest,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// SHA-256 of a file on disk (provenance for ingested inputs).
pub fn file_digest(path: &Path) -> ExportResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn render_nodes(g: &Mdbg) -> Vec<u8> {
    let mut s = String::from("id,dim,symbols\n");
    for (id, key) in g.keys().iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", id, key.dim, key.symbols_string());
    }
    s.into_bytes()
}

fn render_seq(g: &Mdbg) -> Vec<u8> {
    let mut s = String::from("src,dst,weight\n");
    for (src, dst, w) in g.seq_edge_triples() {
        let _ = writeln!(s, "{src},{dst},{w}");
    }
    s.into_bytes()
}

fn render_hyper(g: &Mdbg) -> Vec<u8> {
    let mut s = String::from("a,b,weight\n");
    for (a, b, w) in g.hyper_edge_triples() {
        let _ = writeln!(s, "{a},{b},{w}");
    }
    s.into_bytes()
}

fn features_header(k: usize) -> String {
    let mut h = String::from("node_id,count");
    for j in 1..k {
        let _ = write!(h, ",v{j}");
    }
    h
}

/// 17 significant digits: enough to reproduce any double bit-exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn render_features(g: &Mdbg) -> (Vec<u8>, usize) {
    let mut s = features_header(g.k());
    s.push('\n');
    let mut rows = 0;
    for id in 0..g.node_count() as NodeId {
        for (tuple, count) in g.feature_multiset(id) {
            let _ = write!(s, "{id},{count}");
            for &v in &tuple.0 {
                let _ = write!(s, ",{}", fmt_f64(v));
            }
            s.push('\n');
            rows += 1;
        }
    }
    (s.into_bytes(), rows)
}

fn render_diffused(dg: &DiffusedGraph) -> Vec<u8> {
    let mut s = String::from("src,dst,weight\n");
    for (src, dst, w) in dg.triples() {
        let _ = writeln!(s, "{src},{dst},{}", fmt_f64(w));
    }
    s.into_bytes()
}

/// Writes a graph (and optionally its diffusion result and discretizer
/// table) into `dir`, returning the manifest that was stored alongside.
/// Two saves of the same inputs produce byte-identical directories.
pub fn save(
    g: &Mdbg,
    diffused: Option<&DiffusedGraph>,
    discretizer: Option<&Discretizer>,
    provenance: &Provenance,
    dir: &Path,
) -> ExportResult<GraphManifest> {
    fs::create_dir_all(dir).map_err(|_| ExportError::UnwritableDirectory(dir.to_path_buf()))?;

    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    files.push(("nodes.csv", render_nodes(g)));
    files.push(("edges_seq.csv", render_seq(g)));
    files.push(("edges_hyper.csv", render_hyper(g)));
    let (feature_bytes, feature_rows) = render_features(g);
    files.push(("features.csv", feature_bytes));
    if let Some(dg) = diffused {
        files.push(("diffused.csv", render_diffused(dg)));
    }
    if let Some(d) = discretizer {
        files.push(("discretizer.json", d.to_json_bytes()));
    }

    let mut file_digests = BTreeMap::new();
    for (name, bytes) in &files {
        file_digests.insert((*name).to_string(), sha256_hex(bytes));
    }
    let stats = g.stats();
    let manifest = GraphManifest {
        format_version: FORMAT_VERSION,
        k: g.k(),
        dims: g.dims(),
        alphabet_sizes: g.alphabet_sizes().to_vec(),
        series_len: g.series_len(),
        node_count: stats.nodes,
        seq_edge_count: stats.seq_edges,
        hyper_edge_count: stats.hyper_edges_undirected,
        feature_rows,
        diffusion: diffused.map(|dg| DiffusionMeta {
            top_k: dg.top_k,
            renormalized: dg.renormalized,
        }),
        discretizer_digest: discretizer.map(Discretizer::digest),
        provenance: provenance.clone(),
        file_digests,
    };

    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
    }
    let mut manifest_bytes =
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), manifest_bytes)?;
    Ok(manifest)
}

/// Reads one archive file, verifying it exists and matches its recorded
/// digest before any parsing happens.
fn read_verified(dir: &Path, name: &str, manifest: &GraphManifest) -> ExportResult<Vec<u8>> {
    let expected = manifest
        .file_digests
        .get(name)
        .ok_or_else(|| ExportError::MalformedArchive(format!("manifest lists no digest for {name}")))?;
    let path = dir.join(name);
    let bytes = fs::read(&path)
        .map_err(|_| ExportError::MalformedArchive(format!("missing required file {name}")))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(ExportError::IntegrityError(format!(
            "{name}: digest {actual} does not match manifest ({expected})"
        )));
    }
    Ok(bytes)
}

struct RowReader<'a> {
    file: &'a str,
    line: usize,
}

impl<'a> RowReader<'a> {
    fn err(&self, message: impl Into<String>) -> ExportError {
        ExportError::MalformedRow {
            file: self.file.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, field: &str, what: &str) -> ExportResult<T> {
        field
            .parse::<T>()
            .map_err(|_| self.err(format!("cannot parse {what} from {field:?}")))
    }
}

fn parse_rows<T>(
    bytes: &[u8],
    file: &str,
    expected_header: &str,
    columns: usize,
    mut row: impl FnMut(&RowReader<'_>, &[&str]) -> ExportResult<T>,
) -> ExportResult<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|_| {
        ExportError::MalformedArchive(format!("{file} is not valid UTF-8"))
    })?;
    let mut out = Vec::new();
    let mut reader = RowReader { file, line: 0 };
    for (idx, line) in text.lines().enumerate() {
        reader.line = idx + 1;
        if idx == 0 {
            if line != expected_header {
                return Err(reader.err(format!(
                    "unexpected header {line:?}, expected {expected_header:?}"
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(reader.err(format!(
                "expected {columns} fields, found {}",
                fields.len()
            )));
        }
        out.push(row(&reader, &fields)?);
    }
    Ok(out)
}

/// Loads and fully validates an archive directory: digests first, then row
/// parsing, then every structural invariant of the graph, then consistency
/// between the manifest tallies and what was actually read.
pub fn load(dir: &Path) -> ExportResult<LoadedArchive> {
    let manifest_bytes = fs::read(dir.join("manifest.json"))
        .map_err(|_| ExportError::MalformedArchive("missing manifest.json".into()))?;
    let manifest: GraphManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| ExportError::MalformedArchive(format!("manifest.json: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(ExportError::VersionMismatch {
            found: manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if manifest.k < 2 {
        return Err(ExportError::MalformedArchive(format!(
            "manifest k = {} is not a valid order",
            manifest.k
        )));
    }

    let node_bytes = read_verified(dir, "nodes.csv", &manifest)?;
    let keys = parse_rows(&node_bytes, "nodes.csv", "id,dim,symbols", 3, |r, f| {
        let id: usize = r.parse(f[0], "node id")?;
        if id != r.line - 2 {
            return Err(r.err(format!("ids must be dense and ascending, found {id}")));
        }
        let dim: u16 = r.parse(f[1], "dimension")?;
        let symbols = f[2]
            .split('|')
            .map(|s| r.parse::<u16>(s, "symbol"))
            .collect::<ExportResult<Vec<u16>>>()?;
        Ok(NodeKey::new(dim, symbols))
    })?;

    let seq_bytes = read_verified(dir, "edges_seq.csv", &manifest)?;
    let seq = parse_rows(&seq_bytes, "edges_seq.csv", "src,dst,weight", 3, |r, f| {
        Ok((
            r.parse::<NodeId>(f[0], "src")?,
            r.parse::<NodeId>(f[1], "dst")?,
            r.parse::<u64>(f[2], "weight")?,
        ))
    })?;

    let hyper_bytes = read_verified(dir, "edges_hyper.csv", &manifest)?;
    let hyper = parse_rows(&hyper_bytes, "edges_hyper.csv", "a,b,weight", 3, |r, f| {
        Ok((
            r.parse::<NodeId>(f[0], "a")?,
            r.parse::<NodeId>(f[1], "b")?,
            r.parse::<u64>(f[2], "weight")?,
        ))
    })?;

    let feature_bytes = read_verified(dir, "features.csv", &manifest)?;
    let features = parse_rows(
        &feature_bytes,
        "features.csv",
        &features_header(manifest.k),
        2 + manifest.k - 1,
        |r, f| {
            let node: NodeId = r.parse(f[0], "node id")?;
            let count: u64 = r.parse(f[1], "count")?;
            let values = f[2..]
                .iter()
                .map(|v| r.parse::<f64>(v, "feature value"))
                .collect::<ExportResult<Vec<f64>>>()?;
            Ok((node, RawTuple(values), count))
        },
    )?;

    let graph = Mdbg::from_parts(
        manifest.k,
        manifest.alphabet_sizes.clone(),
        manifest.series_len,
        keys,
        seq,
        hyper,
        features,
    )?;

    // Manifest tallies must describe the graph we just rebuilt.
    let stats = graph.stats();
    let checks = [
        ("node_count", manifest.node_count, stats.nodes),
        ("seq_edge_count", manifest.seq_edge_count, stats.seq_edges),
        (
            "hyper_edge_count",
            manifest.hyper_edge_count,
            stats.hyper_edges_undirected,
        ),
        (
            "feature_rows",
            manifest.feature_rows,
            (0..stats.nodes as NodeId)
                .map(|id| graph.feature_multiset(id).len())
                .sum(),
        ),
        ("dims", manifest.dims, graph.dims()),
    ];
    for (what, recorded, actual) in checks {
        if recorded != actual {
            return Err(ExportError::IntegrityError(format!(
                "manifest {what} = {recorded} but archive contains {actual}"
            )));
        }
    }

    let diffused = match &manifest.diffusion {
        None => None,
        Some(meta) => {
            let bytes = read_verified(dir, "diffused.csv", &manifest)?;
            let triples = parse_rows(&bytes, "diffused.csv", "src,dst,weight", 3, |r, f| {
                let src: NodeId = r.parse(f[0], "src")?;
                let dst: NodeId = r.parse(f[1], "dst")?;
                let w: f64 = r.parse(f[2], "weight")?;
                if src as usize >= stats.nodes || dst as usize >= stats.nodes {
                    return Err(r.err(format!("edge ({src},{dst}) references a missing node")));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(r.err(format!("weight {w} is not a non-negative finite value")));
                }
                Ok((src, dst, w))
            })?;
            let mut rows: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); stats.nodes];
            for (src, dst, w) in triples {
                rows[src as usize].push((dst, w));
            }
            for (src, row) in rows.iter_mut().enumerate() {
                row.sort_by_key(|&(dst, _)| dst);
                if row.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(ExportError::IntegrityError(format!(
                        "diffused row {src} has duplicate targets"
                    )));
                }
                if row.len() > meta.top_k {
                    return Err(ExportError::IntegrityError(format!(
                        "diffused row {src} has {} entries, beyond top_k = {}",
                        row.len(),
                        meta.top_k
                    )));
                }
            }
            Some(DiffusedGraph {
                rows,
                top_k: meta.top_k,
                renormalized: meta.renormalized,
            })
        }
    };

    let discretizer = match &manifest.discretizer_digest {
        None => None,
        Some(expected) => {
            let bytes = read_verified(dir, "discretizer.json", &manifest)?;
            let d = Discretizer::from_json_bytes(&bytes)?;
            let actual = d.digest();
            if &actual != expected {
                return Err(ExportError::IntegrityError(format!(
                    "discretizer digest {actual} does not match manifest ({expected})"
                )));
            }
            // Every stored raw tuple must discretize back to its owner.
            for id in 0..graph.node_count() as NodeId {
                let key = graph.key(id);
                for tuple in graph.feature_multiset(id).keys() {
                    for (j, &v) in tuple.0.iter().enumerate() {
                        let symbol = d.symbol_for(key.dim as usize - 1, v)?;
                        if symbol != key.symbols[j] {
                            return Err(ExportError::IntegrityError(format!(
                                "feature tuple of node {key} discretizes to symbol {symbol} at position {j}, expected {}",
                                key.symbols[j]
                            )));
                        }
                    }
                }
            }
            Some(d)
        }
    };

    Ok(LoadedArchive {
        graph,
        diffused,
        discretizer,
        manifest,
    })
}

/// Serialized mask record for one query window.
#[derive(Debug, Serialize)]
struct MaskRecord<'a> {
    window: usize,
    set_node_ids: Vec<NodeId>,
    resolutions: &'a [query::Resolution],
}

/// Resolves every window against the graph and writes one JSON record per
/// line: `{"window", "set_node_ids", "resolutions": [...]}`, in input order.
pub fn export_mask_batch(
    g: &Mdbg,
    windows: &[QueryWindow],
    k: usize,
    path: &Path,
) -> ExportResult<()> {
    if windows.is_empty() {
        return Err(ExportError::EmptyBatch);
    }
    let mut out = String::new();
    for (i, w) in windows.iter().enumerate() {
        let m = query::mask(g, w, k)?;
        let record = MaskRecord {
            window: i,
            set_node_ids: m.set_ids(),
            resolutions: &m.resolutions,
        };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&record).expect("mask record serializes")
        );
    }
    fs::write(path, out)?;
    Ok(())
}

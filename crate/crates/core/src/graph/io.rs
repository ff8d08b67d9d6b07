//! On-disk formats: tab-separated edge list, `TENTF1` binary features,
//! one-label-per-line text and the JSON split manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{ClassSplit, Csr, Graph};
use crate::error::{Result, TentError};

pub const FEATURE_MAGIC: &[u8; 6] = b"TENTF1";

pub const EDGE_FILE: &str = "edges.tsv";
pub const FEATURE_FILE: &str = "features.bin";
pub const LABEL_FILE: &str = "labels.txt";
pub const SPLIT_FILE: &str = "split.json";

/// Standard file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            edges: dir.join(EDGE_FILE),
            features: dir.join(FEATURE_FILE),
            labels: dir.join(LABEL_FILE),
            split: dir.join(SPLIT_FILE),
        }
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> TentError {
    TentError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| TentError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| TentError::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| TentError::io(path, e))?))
}

/// Reads `u<TAB>v` pairs; blank lines and `#` comments are skipped.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let reader = BufReader::new(open(path)?);
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TentError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(path, i + 1, format!("expected `u<TAB>v`, got {trimmed:?}")));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format_err(path, i + 1, format!("invalid node id {s:?}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

pub fn write_edges(path: &Path, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| TentError::io(path, e);
    for (u, v) in edges {
        writeln!(w, "{u}\t{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| TentError::io(path, e))?;
    if bytes.len() < 22 || &bytes[..6] != FEATURE_MAGIC {
        return Err(format_err(path, 0, "missing TENTF1 header"));
    }
    let rows = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    let body = &bytes[22..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err(path, 0, "feature dimensions overflow"))?;
    if body.len() != expected {
        return Err(format_err(
            path,
            0,
            format!("expected {expected} payload bytes for {rows}x{cols}, found {}", body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| format_err(path, 0, e.to_string()))
}

pub fn write_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| TentError::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(features.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(features.ncols() as u64).to_le_bytes()).map_err(io)?;
    for &x in features.iter() {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let reader = BufReader::new(open(path)?);
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TentError::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let l: i64 = t
            .parse()
            .map_err(|_| format_err(path, i + 1, format!("invalid label {t:?}")))?;
        if l < -1 {
            return Err(format_err(path, i + 1, format!("label {l} below -1")));
        }
        labels.push(l);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| TentError::io(path, e);
    for l in labels {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads and validates a graph. Directed edges are symmetrized, duplicates
/// merged and self-loops dropped.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    let features = read_features(feature_path)?;
    let labels = read_labels(label_path)?;
    let edges = read_edges(edge_path)?;
    let n = features.nrows();
    if n == 0 {
        return Err(TentError::Integrity("empty graph: feature file has no rows".into()));
    }
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(TentError::Integrity(format!(
            "edge ({u}, {v}) references a node outside 0..{n}"
        )));
    }
    let adjacency = Csr::from_undirected_edges(n, &edges)?;
    Graph::new(adjacency, features, labels)
}

/// Writes the three graph files; `load_graph` on them reproduces `g`.
pub fn write_graph(g: &Graph, paths: &DatasetPaths) -> Result<()> {
    write_edges(&paths.edges, g.adjacency().edges())?;
    write_features(&paths.features, g.features())?;
    write_labels(&paths.labels, g.labels())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Graph, ClassSplit)> {
    let paths = DatasetPaths::in_dir(dir);
    let g = load_graph(&paths.edges, &paths.features, &paths.labels)?;
    let split = read_split(&paths.split)?;
    split.validate(&g)?;
    Ok((g, split))
}

pub fn read_split(path: &Path) -> Result<ClassSplit> {
    let text = fs::read_to_string(path).map_err(|e| TentError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_split(path: &Path, split: &ClassSplit) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, split)?;
    w.flush().map_err(|e| TentError::io(path, e))
}

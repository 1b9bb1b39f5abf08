use std::fs;
use std::path::{Path, PathBuf};

use super::{BuildStats, Graph, NodeSplit};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Paths of the three files that make up a graph on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl GraphFiles {
    /// `edges.tsv`, `features.csv` and `labels.txt` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        GraphFiles {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads `src<TAB>dst` lines; blank lines and `#` comments are skipped.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(|c: char| c == '\t' || c.is_whitespace()).filter(|s| !s.is_empty());
        let mut next = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| parse_err(path, i + 1, "expected two node ids"))?;
            tok.parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad node id {tok:?}")))
        };
        let (u, v) = (next()?, next()?);
        if parts.next().is_some() {
            return Err(parse_err(path, i + 1, "expected exactly two columns"));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, i + 1, format!("non-numeric feature cell {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// One class id per line, `-1` meaning unlabeled.
pub fn read_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let tok = l.trim();
            match tok.parse::<i64>() {
                Ok(-1) => Ok(None),
                Ok(y) if y >= 0 => Ok(Some(y as usize)),
                _ => Err(parse_err(path, i + 1, format!("bad label {tok:?}"))),
            }
        })
        .collect()
}

/// Loads and symmetrizes a graph. Node ids are the feature row indices.
pub fn load_graph(files: &GraphFiles) -> Result<(Graph, BuildStats)> {
    let features = read_features(&files.features)?;
    let labels = read_labels(&files.labels)?;
    let edges = read_edges(&files.edges)?;
    Graph::from_edges(&edges, features, labels, None)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    crate::harness::write_atomic(path, contents)
}

pub fn save_graph(g: &Graph, files: &GraphFiles) -> Result<()> {
    let mut edges = String::from("# src\tdst\n");
    for (u, v) in g.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_atomic(&files.edges, edges.as_bytes())?;

    let mut feats = String::new();
    for r in 0..g.num_nodes() {
        let cells: Vec<String> = g.features().row(r).iter().map(|x| x.to_string()).collect();
        feats.push_str(&cells.join(","));
        feats.push('\n');
    }
    write_atomic(&files.features, feats.as_bytes())?;

    let mut labels = String::new();
    for y in g.labels() {
        match y {
            Some(y) => labels.push_str(&format!("{y}\n")),
            None => labels.push_str("-1\n"),
        }
    }
    write_atomic(&files.labels, labels.as_bytes())
}

pub fn load_split(path: &Path) -> Result<NodeSplit> {
    Ok(serde_json::from_str(&read(path)?)?)
}

pub fn save_split(split: &NodeSplit, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string(split)?.as_bytes())
}

//! Undirected CSR graphs with node features and labels.

mod io;
mod splits;

pub use io::{load_graph, load_split, save_graph, save_split, GraphFiles};
pub use splits::{
    build_simulation_settings, build_standard_setting, median_partition, EvalSetting, NodeSplit,
    SettingKind,
};

use crate::error::{Error, Result};
use crate::nn::{SparseRows, Tensor};

/// Undirected graph without self-loops, stored in CSR form with both
/// directions of every edge. Neighbor lists are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_classes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Tensor,
    labels: Vec<Option<usize>>,
}

/// What [`Graph::from_edges`] had to clean up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

impl Graph {
    /// Builds a symmetric CSR graph. Directed input is symmetrized,
    /// duplicates are merged and self-loops dropped.
    ///
    /// `num_classes` defaults to one more than the largest label.
    pub fn from_edges(
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<Option<usize>>,
        num_classes: Option<usize>,
    ) -> Result<(Graph, BuildStats)> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::CountMismatch(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        let max_label = labels.iter().flatten().max().map(|&m| m + 1).unwrap_or(0);
        let num_classes = num_classes.unwrap_or(max_label);
        if max_label > num_classes {
            return Err(Error::Config(format!(
                "label {} out of range for {num_classes} classes",
                max_label - 1
            )));
        }

        let mut stats = BuildStats::default();
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::DanglingNode { id, num_nodes: n });
                }
            }
            if u == v {
                stats.self_loops_dropped += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        stats.duplicates_dropped = before - pairs.len();

        let mut degree = vec![0usize; n];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0usize; offsets[n]];
        for &(u, v) in &pairs {
            targets[cursor[u]] = v;
            cursor[u] += 1;
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..n {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        let g = Graph {
            num_classes,
            offsets,
            targets,
            features,
            labels,
        };
        debug_assert!(g.validate().is_ok());
        Ok((g, stats))
    }

    /// Checks the CSR invariants: monotone offsets, in-range targets,
    /// no self-loops and symmetric adjacency.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.offsets.len() != n + 1
            || self.offsets[0] != 0
            || self.offsets[n] != self.targets.len()
            || self.offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Shape("malformed CSR offsets".into()));
        }
        for v in 0..n {
            for &u in self.neighbors(v) {
                if u >= n {
                    return Err(Error::DanglingNode { id: u, num_nodes: n });
                }
                if u == v {
                    return Err(Error::Shape(format!("self-loop on {v}")));
                }
                if self.neighbors(u).binary_search(&v).is_err() {
                    return Err(Error::Shape(format!("edge ({v},{u}) has no reverse")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Same nodes, features and labels over a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Graph> {
        Graph::from_edges(
            edges,
            self.features.clone(),
            self.labels.clone(),
            Some(self.num_classes),
        )
        .map(|(g, _)| g)
    }

    /// Adjacency rows of `batch` as a sparse `|batch| x N` matrix.
    pub fn adjacency_rows(&self, batch: &[usize]) -> SparseRows {
        let mut offsets = Vec::with_capacity(batch.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for &v in batch {
            indices.extend_from_slice(self.neighbors(v));
            offsets.push(indices.len());
        }
        SparseRows {
            offsets,
            indices,
            num_cols: self.num_nodes(),
        }
    }

    /// Label ids of `idx`, failing on any unlabeled node.
    pub fn labels_of(&self, idx: &[usize]) -> Result<Vec<usize>> {
        idx.iter()
            .map(|&v| {
                self.labels
                    .get(v)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::LabelsRequired(format!("node {v} is unlabeled")))
            })
            .collect()
    }

    /// Fraction of `v`'s neighbors that share its label.
    ///
    /// `Ok(None)` for degree-0 nodes, where homophily is undefined.
    pub fn node_homophily(&self, v: usize) -> Result<Option<f64>> {
        let n = self.num_nodes();
        if v >= n {
            return Err(Error::NodeOutOfRange { id: v, num_nodes: n });
        }
        let yv = self
            .labels[v]
            .ok_or_else(|| Error::LabelsRequired(format!("node {v} is unlabeled")))?;
        let nbrs = self.neighbors(v);
        if nbrs.is_empty() {
            return Ok(None);
        }
        let mut same = 0usize;
        for &u in nbrs {
            match self.labels[u] {
                Some(yu) if yu == yv => same += 1,
                Some(_) => {}
                None => {
                    return Err(Error::LabelsRequired(format!(
                        "neighbor {u} of node {v} is unlabeled"
                    )))
                }
            }
        }
        Ok(Some(same as f64 / nbrs.len() as f64))
    }

    /// Histogram of node homophily over `idx`. Bins are `[e_i, e_{i+1})`
    /// except the last, which is closed on the right. Nodes with undefined
    /// homophily or values outside the edges are skipped.
    pub fn homophily_histogram(&self, idx: &[usize], bin_edges: &[f64]) -> Result<Vec<usize>> {
        if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "bin edges must be at least two strictly increasing values".into(),
            ));
        }
        let mut values = Vec::with_capacity(idx.len());
        for &v in idx {
            if let Some(h) = self.node_homophily(v)? {
                values.push(h);
            }
        }
        Ok(histogram(&values, bin_edges))
    }
}

/// Counts `values` into bins `[e_i, e_{i+1})`, the last bin right-closed.
pub fn histogram(values: &[f64], bin_edges: &[f64]) -> Vec<usize> {
    let bins = bin_edges.len().saturating_sub(1);
    let mut counts = vec![0usize; bins];
    let last = bin_edges[bins];
    for &h in values {
        if h < bin_edges[0] || h > last {
            continue;
        }
        let b = if h == last {
            bins - 1
        } else {
            bin_edges.partition_point(|&e| e <= h) - 1
        };
        counts[b] += 1;
    }
    counts
}

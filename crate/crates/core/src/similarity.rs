//! Feature-similarity estimates of a node's neighbor pattern.
//!
//! Three pairwise similarities are supported, all built on cosine
//! similarity of feature rows:
//!
//! - `LocalSim(u, v) = cos(x_u, x_v)`
//! - `AggSim(u, v) = cos((ÂX)_u, (ÂX)_v)` with `Â = D⁻¹A`
//! - `SimRank(u, v) = c / (|N(u)||N(v)|) · Σ_{u'∈N(u), v'∈N(v)} cos(x_u', x_v')`
//!
//! The neighbor pattern of `v` is the mean similarity between `v` and its
//! neighbors. SimRank is single-level and seeded by features; it is not the
//! recursive fixed point.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LocalSim,
    AggSim,
    SimRank,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::LocalSim, Metric::AggSim, Metric::SimRank];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LocalSim => "local_sim",
            Metric::AggSim => "agg_sim",
            Metric::SimRank => "sim_rank",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "local_sim" | "localsim" | "local" => Ok(Metric::LocalSim),
            "agg_sim" | "aggsim" | "agg" => Ok(Metric::AggSim),
            "sim_rank" | "simrank" => Ok(Metric::SimRank),
            _ => Err(Error::Config(format!("unknown similarity metric {s:?}"))),
        }
    }
}

/// What an isolated node's pattern is set to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolatedPolicy {
    #[default]
    ZeroPattern,
    /// Mean pattern of the non-isolated nodes (0 when there are none).
    GlobalMeanPattern,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub metric: Metric,
    pub decay_c: f64,
    pub isolated_policy: IsolatedPolicy,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            metric: Metric::SimRank,
            decay_c: 0.6,
            isolated_policy: IsolatedPolicy::ZeroPattern,
        }
    }
}

impl SimilarityConfig {
    pub fn new(metric: Metric) -> Self {
        SimilarityConfig {
            metric,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_c > 0.0 && self.decay_c < 1.0) {
            return Err(Error::Config(format!(
                "decay_c must lie in (0, 1), got {}",
                self.decay_c
            )));
        }
        Ok(())
    }
}

/// Per-node neighbor-pattern estimate `z_v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborPattern {
    pub values: Vec<f64>,
    pub config: SimilarityConfig,
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_sim(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with {} and {} entries",
            x.len(),
            y.len()
        )));
    }
    Ok(cosine_unchecked(x, y))
}

fn cosine_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
}

/// Row `v` becomes the mean of `feats` over `N(v)`; degree-0 rows are
/// left as they are.
pub fn row_norm_aggregate(g: &Graph, feats: &Tensor) -> Tensor {
    let mut out = feats.clone();
    for v in 0..g.num_nodes() {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let row = out.row_mut(v);
        row.fill(0.0);
        for &u in nbrs {
            for (o, x) in row.iter_mut().zip(feats.row(u)) {
                *o += x;
            }
        }
        let inv = 1.0 / nbrs.len() as f64;
        for o in row.iter_mut() {
            *o *= inv;
        }
    }
    out
}

fn check_node(g: &Graph, v: usize) -> Result<()> {
    if v >= g.num_nodes() {
        return Err(Error::NodeOutOfRange {
            id: v,
            num_nodes: g.num_nodes(),
        });
    }
    Ok(())
}

fn aggregated_row(g: &Graph, v: usize) -> Vec<f64> {
    let feats = g.features();
    let nbrs = g.neighbors(v);
    if nbrs.is_empty() {
        return feats.row(v).to_vec();
    }
    let mut row = vec![0.0; feats.cols()];
    for &u in nbrs {
        for (o, x) in row.iter_mut().zip(feats.row(u)) {
            *o += x;
        }
    }
    let inv = 1.0 / nbrs.len() as f64;
    row.iter_mut().for_each(|o| *o *= inv);
    row
}

fn simrank_pair(g: &Graph, u: usize, v: usize, c: f64) -> f64 {
    let (nu, nv) = (g.neighbors(u), g.neighbors(v));
    if nu.is_empty() || nv.is_empty() {
        return 0.0;
    }
    let x = g.features();
    let mut total = 0.0;
    for &a in nu {
        for &b in nv {
            total += cosine_unchecked(x.row(a), x.row(b));
        }
    }
    c * total / (nu.len() * nv.len()) as f64
}

/// Similarity of a node pair under `cfg.metric`, computed directly from
/// the definition.
pub fn pair_similarity(g: &Graph, u: usize, v: usize, cfg: &SimilarityConfig) -> Result<f64> {
    cfg.validate()?;
    check_node(g, u)?;
    check_node(g, v)?;
    let x = g.features();
    Ok(match cfg.metric {
        Metric::LocalSim => cosine_unchecked(x.row(v), x.row(u)),
        Metric::AggSim => cosine_unchecked(&aggregated_row(g, v), &aggregated_row(g, u)),
        Metric::SimRank => simrank_pair(g, u, v, cfg.decay_c),
    })
}

fn apply_isolated_policy(g: &Graph, values: &mut [f64], policy: IsolatedPolicy) {
    let fill = match policy {
        IsolatedPolicy::ZeroPattern => 0.0,
        IsolatedPolicy::GlobalMeanPattern => {
            let (sum, count) = (0..g.num_nodes())
                .filter(|&v| g.degree(v) > 0)
                .fold((0.0, 0usize), |(s, c), v| (s + values[v], c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
    };
    for v in 0..g.num_nodes() {
        if g.degree(v) == 0 {
            values[v] = fill;
        }
    }
}

/// `z_v = mean_{u ∈ N(v)} Similarity(u, v)` using the pairwise definitions.
///
/// SimRank here costs O(Σ_v Σ_{u∈N(v)} deg(u)·deg(v)·D); use
/// [`estimate_patterns_fast_simrank`] on anything but small graphs.
pub fn estimate_patterns(g: &Graph, cfg: &SimilarityConfig) -> Result<NeighborPattern> {
    cfg.validate()?;
    let n = g.num_nodes();
    let x = g.features();
    let agg = match cfg.metric {
        Metric::AggSim => Some(row_norm_aggregate(g, x)),
        _ => None,
    };
    let mut values = vec![0.0; n];
    for (v, z) in values.iter_mut().enumerate() {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let total: f64 = nbrs
            .iter()
            .map(|&u| match cfg.metric {
                Metric::LocalSim => cosine_unchecked(x.row(v), x.row(u)),
                Metric::AggSim => {
                    let a = agg.as_ref().unwrap();
                    cosine_unchecked(a.row(v), a.row(u))
                }
                Metric::SimRank => simrank_pair(g, u, v, cfg.decay_c),
            })
            .sum();
        *z = total / nbrs.len() as f64;
    }
    apply_isolated_policy(g, &mut values, cfg.isolated_policy);
    Ok(NeighborPattern {
        values,
        config: *cfg,
    })
}

/// SimRank patterns in O(nnz · D).
///
/// With unit-normalized rows `x̂` and `M = D⁻¹A X̂`, the pairwise SimRank is
/// `c · M_u · M_v`, so `z_v = c/|N(v)| · Σ_{u∈N(v)} M_u · M_v`. Zero feature
/// rows stay zero, matching the zero-norm cosine convention.
pub fn estimate_patterns_fast_simrank(
    g: &Graph,
    decay_c: f64,
    isolated_policy: IsolatedPolicy,
) -> Result<NeighborPattern> {
    let cfg = SimilarityConfig {
        metric: Metric::SimRank,
        decay_c,
        isolated_policy,
    };
    cfg.validate()?;
    let mut unit = g.features().clone();
    for r in 0..unit.rows() {
        let row = unit.row_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let m = row_norm_aggregate(g, &unit);
    let mut values = vec![0.0; g.num_nodes()];
    for (v, z) in values.iter_mut().enumerate() {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let mv = m.row(v);
        let total: f64 = nbrs
            .iter()
            .map(|&u| m.row(u).iter().zip(mv).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        *z = decay_c * total / nbrs.len() as f64;
    }
    apply_isolated_policy(g, &mut values, isolated_policy);
    Ok(NeighborPattern { values, config: cfg })
}

/// Dispatches to the fast path for SimRank and the direct path otherwise.
pub fn compute_patterns(g: &Graph, cfg: &SimilarityConfig) -> Result<NeighborPattern> {
    match cfg.metric {
        Metric::SimRank => estimate_patterns_fast_simrank(g, cfg.decay_c, cfg.isolated_policy),
        _ => estimate_patterns(g, cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn pattern_summary(p: &NeighborPattern, idx: &[usize]) -> Result<PatternSummary> {
    if idx.is_empty() {
        return Err(Error::Insufficient("pattern summary of an empty node set".into()));
    }
    let mut vals = Vec::with_capacity(idx.len());
    for &v in idx {
        let z = *p.values.get(v).ok_or(Error::NodeOutOfRange {
            id: v,
            num_nodes: p.values.len(),
        })?;
        vals.push(z);
    }
    let (mean, std) = crate::stats::mean_std(&vals);
    vals.sort_by(f64::total_cmp);
    Ok(PatternSummary {
        count: vals.len(),
        mean,
        std,
        min: vals[0],
        q1: crate::stats::quantile_sorted(&vals, 0.25),
        median: crate::stats::quantile_sorted(&vals, 0.5),
        q3: crate::stats::quantile_sorted(&vals, 0.75),
        max: vals[vals.len() - 1],
    })
}

impl NeighborPattern {
    /// `# metric=<name> c=<decay>` then `node_id,z` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# metric={} c={}\nnode_id,z\n",
            self.config.metric, self.config.decay_c
        );
        for (v, z) in self.values.iter().enumerate() {
            out.push_str(&format!("{v},{z}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<NeighborPattern> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<pattern csv>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut config = SimilarityConfig::default();
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("metric", m)) => config.metric = m.parse()?,
                Some(("c", c)) => {
                    config.decay_c = c.parse().map_err(|_| bad(1, "bad decay factor"))?
                }
                _ => return Err(bad(1, "expected '# metric=<name> c=<decay>'")),
            }
        }
        if lines.next().map(str::trim) != Some("node_id,z") {
            return Err(bad(2, "expected column header node_id,z"));
        }
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let (id, z) = line.split_once(',').ok_or_else(|| bad(i + 3, "expected two columns"))?;
            let id: usize = id.trim().parse().map_err(|_| bad(i + 3, "bad node id"))?;
            if id != values.len() {
                return Err(bad(i + 3, "node ids must be dense and ordered"));
            }
            values.push(z.trim().parse().map_err(|_| bad(i + 3, "bad value"))?);
        }
        Ok(NeighborPattern { values, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Stacks several patterns column-wise for the rows in `idx`.
pub fn pattern_matrix(patterns: &[NeighborPattern], idx: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * patterns.len());
    for &v in idx {
        for p in patterns {
            data.push(p.values[v]);
        }
    }
    Tensor::from_vec(idx.len(), patterns.len(), data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(feats: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> Graph {
        let n = feats.len();
        Graph::from_edges(edges, Tensor::from_rows(&feats).unwrap(), vec![Some(0); n], None)
            .unwrap()
            .0
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregate_path_and_isolated() {
        let g = graph(
            vec![vec![1.0, 0.0], vec![0.0, 4.0], vec![3.0, 2.0], vec![7.0, 7.0]],
            &[(0, 1), (1, 2)],
        );
        let agg = row_norm_aggregate(&g, g.features());
        assert_eq!(agg.row(1), &[2.0, 1.0]);
        assert_eq!(agg.row(0), &[0.0, 4.0]);
        assert_eq!(agg.row(3), &[7.0, 7.0]);
    }

    #[test]
    fn aggregate_fixed_point_on_regular_graph() {
        let feats = vec![vec![0.3, -1.0]; 4];
        let g = graph(feats, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(row_norm_aggregate(&g, g.features()), *g.features());
    }

    #[test]
    fn local_sim_patterns() {
        // Node 0 with neighbors of identical features.
        let g = graph(vec![vec![1.0, 1.0]; 3], &[(0, 1), (0, 2)]);
        let p = estimate_patterns(&g, &SimilarityConfig::new(Metric::LocalSim)).unwrap();
        assert!((p.values[0] - 1.0).abs() < 1e-15);

        // Star center orthogonal to all leaves.
        let g = graph(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            &[(0, 1), (0, 2)],
        );
        let p = estimate_patterns(&g, &SimilarityConfig::new(Metric::LocalSim)).unwrap();
        assert_eq!(p.values[0], 0.0);
    }

    #[test]
    fn simrank_isolated_endpoint_is_zero() {
        let g = graph(vec![vec![1.0], vec![1.0], vec![1.0]], &[(0, 1)]);
        let cfg = SimilarityConfig::new(Metric::SimRank);
        assert_eq!(pair_similarity(&g, 0, 2, &cfg).unwrap(), 0.0);
        assert!(pair_similarity(&g, 0, 3, &cfg).is_err());
    }

    #[test]
    fn fast_simrank_on_complete_graph_is_decay() {
        let n = 6;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v));
            }
        }
        let g = graph(vec![vec![0.2, 0.4, -1.0]; n], &edges);
        let p = estimate_patterns_fast_simrank(&g, 0.6, IsolatedPolicy::ZeroPattern).unwrap();
        for z in p.values {
            assert!((z - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_policies() {
        let g = graph(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]], &[(0, 1), (1, 2)]);
        let zero = estimate_patterns(&g, &SimilarityConfig::new(Metric::LocalSim)).unwrap();
        assert_eq!(zero.values[3], 0.0);
        let cfg = SimilarityConfig {
            isolated_policy: IsolatedPolicy::GlobalMeanPattern,
            ..SimilarityConfig::new(Metric::LocalSim)
        };
        let mean = estimate_patterns(&g, &cfg).unwrap();
        let expect = (mean.values[0] + mean.values[1] + mean.values[2]) / 3.0;
        assert!((mean.values[3] - expect).abs() < 1e-15);

        let empty = graph(vec![vec![1.0]; 3], &[]);
        let fast = estimate_patterns_fast_simrank(&empty, 0.6, IsolatedPolicy::GlobalMeanPattern).unwrap();
        assert_eq!(fast.values, vec![0.0; 3]);
    }

    #[test]
    fn summary_examples() {
        let p = NeighborPattern {
            values: vec![0.0, 1.0],
            config: SimilarityConfig::default(),
        };
        let s = pattern_summary(&p, &[0, 1]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(pattern_summary(&p, &[1]).unwrap().std, 0.0);
        assert!(pattern_summary(&p, &[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = NeighborPattern {
            values: vec![0.1, -0.25, 1.0 / 3.0],
            config: SimilarityConfig::new(Metric::AggSim),
        };
        let back = NeighborPattern::from_csv(&p.to_csv()).unwrap();
        assert_eq!(back, p);
        assert!(p.to_csv().starts_with("# metric=agg_sim c=0.6\nnode_id,z\n"));
    }

    #[test]
    fn invalid_decay_is_rejected() {
        let g = graph(vec![vec![1.0]; 2], &[(0, 1)]);
        for c in [0.0, 1.0, -0.5] {
            assert!(estimate_patterns_fast_simrank(&g, c, IsolatedPolicy::ZeroPattern).is_err());
        }
    }
}

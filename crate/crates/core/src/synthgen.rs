//! Synthetic heterophilic graphs with a controlled homophily shift.
//!
//! Generation order:
//!
//! 1. labels uniform over classes, regions (train/val/test) by a seeded
//!    permutation;
//! 2. a target homophily `h_v` from the region's distribution (validation
//!    nodes share the train distribution);
//! 3. `mean_degree` edge stubs per node, each homophilous with probability
//!    `h_v`; homophilous stubs are matched within a class and the rest
//!    across classes, so realized homophily tracks `h_v` closely;
//! 4. invariant features `X^I ~ N(e_y, σ²I)` and spurious features
//!    `X^S ~ N(s·e_{s_v}, σ²I)`, where the spurious class `s_v` equals `y_v`
//!    with a region- or homophily-dependent probability and is a uniform
//!    class otherwise.
//!
//! Every stage draws from its own ChaCha stream, so the output is a pure
//! function of the config.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphFiles, NodeSplit};
use crate::nn::Tensor;

/// Distribution of per-node target homophily within a region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HomophilyDist {
    Beta { alpha: f64, beta: f64 },
    /// Point mass; the `α → ∞` limit of a Beta.
    Fixed { value: f64 },
}

impl HomophilyDist {
    pub fn beta(alpha: f64, beta: f64) -> Self {
        HomophilyDist::Beta { alpha, beta }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            HomophilyDist::Beta { alpha, beta } => alpha / (alpha + beta),
            HomophilyDist::Fixed { value } => value,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            HomophilyDist::Beta { alpha, beta } => {
                alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()
            }
            HomophilyDist::Fixed { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: invalid homophily distribution {self:?}")))
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            HomophilyDist::Beta { alpha, beta } => {
                Sampler::Beta(Beta::new(alpha, beta).expect("validated"))
            }
            HomophilyDist::Fixed { value } => Sampler::Fixed(value),
        }
    }
}

enum Sampler {
    Beta(Beta<f64>),
    Fixed(f64),
}

impl Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Beta(b) => b.sample(rng).clamp(0.0, 1.0),
            Sampler::Fixed(v) => *v,
        }
    }
}

/// How the probability that the spurious class tracks the label is set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpuriousMode {
    /// One probability per region (`spurious_corr_train` / `_test`).
    Region,
    /// A function of the node's target homophily: the straight line through
    /// `(mean train h, spurious_corr_train)` and `(mean test h,
    /// spurious_corr_test)`, clipped to `[0, 1]`. Falls back to `Region`
    /// when both means coincide.
    #[default]
    HomophilyLinked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub mean_degree: usize,
    pub d_inv: usize,
    pub d_sp: usize,
    pub train_hom: HomophilyDist,
    pub test_hom: HomophilyDist,
    pub spurious_corr_train: f64,
    pub spurious_corr_test: f64,
    pub spurious_mode: SpuriousMode,
    /// Scale of the spurious class means relative to the invariant ones.
    pub spurious_scale: f64,
    pub noise_sigma: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Number of homophily-quantile buckets reported as `true_env`.
    pub num_envs: usize,
    /// Adds one edge from every node to a hub of its spurious class.
    pub structural_spurious: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 2000,
            num_classes: 3,
            mean_degree: 8,
            d_inv: 3,
            d_sp: 3,
            train_hom: HomophilyDist::beta(5.0, 2.0),
            test_hom: HomophilyDist::beta(2.0, 5.0),
            spurious_corr_train: 0.95,
            spurious_corr_test: 0.05,
            spurious_mode: SpuriousMode::HomophilyLinked,
            spurious_scale: 1.0,
            noise_sigma: 1.0,
            train_frac: 0.5,
            val_frac: 0.2,
            num_envs: 4,
            structural_spurious: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.num_nodes < 2 * self.num_classes {
            return bad(format!("{} nodes is too few for {} classes", self.num_nodes, self.num_classes));
        }
        if self.mean_degree < 1 {
            return bad("mean_degree must be at least 1".into());
        }
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.train_frac) || !in_unit(self.val_frac) || self.train_frac + self.val_frac >= 1.0 {
            return bad(format!(
                "fractions must lie in (0,1) and sum below 1: train {} val {}",
                self.train_frac, self.val_frac
            ));
        }
        self.train_hom.validate("train_hom")?;
        self.test_hom.validate("test_hom")?;
        for (name, p) in [
            ("spurious_corr_train", self.spurious_corr_train),
            ("spurious_corr_test", self.spurious_corr_test),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0,1], got {p}"));
            }
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if !self.spurious_scale.is_finite() || self.spurious_scale < 0.0 {
            return bad(format!("spurious_scale must be non-negative, got {}", self.spurious_scale));
        }
        if self.d_inv < self.num_classes {
            return bad(format!("d_inv {} < num_classes {}", self.d_inv, self.num_classes));
        }
        if self.d_sp != 0 && self.d_sp < self.num_classes {
            return bad(format!("d_sp must be 0 or at least num_classes, got {}", self.d_sp));
        }
        if self.num_envs == 0 {
            return bad("num_envs must be at least 1".into());
        }
        Ok(())
    }

    /// Probability that `s_v = y_v` for a node of `region` with target
    /// homophily `h`.
    pub fn spurious_prob(&self, region: Region, h: f64) -> f64 {
        let region_p = match region {
            Region::Train | Region::Val => self.spurious_corr_train,
            Region::Test => self.spurious_corr_test,
        };
        match self.spurious_mode {
            SpuriousMode::Region => region_p,
            SpuriousMode::HomophilyLinked => {
                let (m_tr, m_te) = (self.train_hom.mean(), self.test_hom.mean());
                if (m_tr - m_te).abs() < 1e-12 {
                    return region_p;
                }
                let slope = (self.spurious_corr_train - self.spurious_corr_test) / (m_tr - m_te);
                (self.spurious_corr_test + slope * (h - m_te)).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Train,
    Val,
    Test,
}

/// Ground truth kept alongside a generated graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub target_homophily: Vec<f64>,
    pub true_env: Vec<usize>,
    pub spurious_class: Vec<usize>,
    pub region: Vec<Region>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub graph: Graph,
    pub split: NodeSplit,
    pub truth: SynthTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Pairs up stubs, rejecting pairs for which `ok` fails. Rejected stubs are
/// reshuffled and retried for a few rounds; whatever is left is dropped.
fn match_stubs<R: Rng>(
    mut stubs: Vec<usize>,
    ok: impl Fn(usize, usize) -> bool,
    rng: &mut R,
    edges: &mut Vec<(usize, usize)>,
) {
    for _ in 0..16 {
        if stubs.len() < 2 {
            break;
        }
        stubs.shuffle(rng);
        let mut rest = Vec::new();
        let mut it = stubs.chunks_exact(2);
        for pair in it.by_ref() {
            if ok(pair[0], pair[1]) {
                edges.push((pair[0], pair[1]));
            } else {
                rest.extend_from_slice(pair);
            }
        }
        rest.extend_from_slice(it.remainder());
        if rest.len() == stubs.len() {
            break;
        }
        stubs = rest;
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let c = cfg.num_classes;

    let mut rng = stream(cfg.seed, 1);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut class_sizes = vec![0usize; c];
    for &y in &labels {
        class_sizes[y] += 1;
    }
    if let Some(k) = class_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!("class {k} has no nodes")));
    }
    let min_class = *class_sizes.iter().min().unwrap();
    if cfg.mean_degree >= min_class {
        return Err(Error::Config(format!(
            "mean_degree {} is not below the smallest class size {min_class}",
            cfg.mean_degree
        )));
    }

    let mut rng = stream(cfg.seed, 2);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_train = ((cfg.train_frac * n as f64).round() as usize).max(1);
    let n_val = ((cfg.val_frac * n as f64).round() as usize).max(1);
    if n_train + n_val >= n {
        return Err(Error::Config("no nodes left for the test region".into()));
    }
    let mut region = vec![Region::Test; n];
    let mut split = NodeSplit {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
    };
    for v in &split.train {
        region[*v] = Region::Train;
    }
    for v in &split.val {
        region[*v] = Region::Val;
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    let mut rng = stream(cfg.seed, 3);
    let train_sampler = cfg.train_hom.sampler();
    let test_sampler = cfg.test_hom.sampler();
    let target: Vec<f64> = region
        .iter()
        .map(|r| match r {
            Region::Train | Region::Val => train_sampler.sample(&mut rng),
            Region::Test => test_sampler.sample(&mut rng),
        })
        .collect();

    let mut rng = stream(cfg.seed, 4);
    let mut same_stubs: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut cross_stubs = Vec::new();
    for v in 0..n {
        for _ in 0..cfg.mean_degree {
            if rng.random::<f64>() < target[v] {
                same_stubs[labels[v]].push(v);
            } else {
                cross_stubs.push(v);
            }
        }
    }
    let mut edges = Vec::with_capacity(n * cfg.mean_degree / 2);
    for stubs in same_stubs {
        match_stubs(stubs, |a, b| a != b, &mut rng, &mut edges);
    }
    match_stubs(cross_stubs, |a, b| labels[a] != labels[b], &mut rng, &mut edges);

    let mut rng = stream(cfg.seed, 5);
    let spurious_class: Vec<usize> = (0..n)
        .map(|v| {
            let p = cfg.spurious_prob(region[v], target[v]);
            if rng.random::<f64>() < p {
                labels[v]
            } else {
                rng.random_range(0..c)
            }
        })
        .collect();

    if cfg.structural_spurious {
        let hubs: Vec<usize> = (0..c)
            .map(|k| labels.iter().position(|&y| y == k).expect("class non-empty"))
            .collect();
        for v in 0..n {
            let hub = hubs[spurious_class[v]];
            if hub != v {
                edges.push((v, hub));
            }
        }
    }

    let mut rng = stream(cfg.seed, 6);
    let dim = cfg.d_inv + cfg.d_sp;
    let mut feats = Tensor::zeros(n, dim);
    for v in 0..n {
        let row = feats.row_mut(v);
        for x in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = cfg.noise_sigma * z;
        }
        row[labels[v]] += 1.0;
        if cfg.d_sp > 0 {
            row[cfg.d_inv + spurious_class[v]] += cfg.spurious_scale;
        }
    }

    let true_env = quantile_buckets(&target, cfg.num_envs);
    let graph_labels = labels.iter().map(|&y| Some(y)).collect();
    let (graph, _) = Graph::from_edges(&edges, feats, graph_labels, Some(c))?;
    Ok(SynthData {
        graph,
        split,
        truth: SynthTruth {
            target_homophily: target,
            true_env,
            spurious_class,
            region,
        },
    })
}

/// Bucket id of each value by rank: `floor(rank · k / n)`.
fn quantile_buckets(values: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &v) in order.iter().enumerate() {
        out[v] = rank * k / n;
    }
    out
}

/// Train/test homophily histograms and spurious agreement per region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub bin_edges: Vec<f64>,
    pub train_hist: Vec<usize>,
    pub val_hist: Vec<usize>,
    pub test_hist: Vec<usize>,
    pub train_mean_homophily: f64,
    pub test_mean_homophily: f64,
    /// L1 distance between the normalized train and test histograms.
    pub hist_l1: f64,
    /// Fraction of nodes whose spurious class equals their label.
    pub spurious_agreement_train: f64,
    pub spurious_agreement_test: f64,
    /// Agreement rescaled so chance level is 0 and perfect agreement is 1.
    pub spurious_corr_train: f64,
    pub spurious_corr_test: f64,
}

pub const DEFAULT_REPORT_BINS: usize = 5;

pub fn shift_report(g: &Graph, split: &NodeSplit, truth: &SynthTruth) -> Result<ShiftReport> {
    shift_report_with_bins(g, split, truth, DEFAULT_REPORT_BINS)
}

pub fn shift_report_with_bins(
    g: &Graph,
    split: &NodeSplit,
    truth: &SynthTruth,
    bins: usize,
) -> Result<ShiftReport> {
    if bins == 0 {
        return Err(Error::Config("need at least one histogram bin".into()));
    }
    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let homs = |idx: &[usize]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len());
        for &v in idx {
            if let Some(h) = g.node_homophily(v)? {
                out.push(h);
            }
        }
        Ok(out)
    };
    let (tr, va, te) = (homs(&split.train)?, homs(&split.val)?, homs(&split.test)?);
    let train_hist = crate::graph::histogram(&tr, &bin_edges);
    let test_hist = crate::graph::histogram(&te, &bin_edges);
    let norm = |h: &[usize]| -> Vec<f64> {
        let total = h.iter().sum::<usize>().max(1) as f64;
        h.iter().map(|&x| x as f64 / total).collect()
    };
    let hist_l1 = norm(&train_hist)
        .iter()
        .zip(norm(&test_hist))
        .map(|(a, b)| (a - b).abs())
        .sum();
    let c = g.num_classes() as f64;
    let agreement = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let hits = idx
            .iter()
            .filter(|&&v| g.label(v) == Some(truth.spurious_class[v]))
            .count();
        hits as f64 / idx.len() as f64
    };
    let rescale = |a: f64| (a - 1.0 / c) / (1.0 - 1.0 / c);
    let (a_tr, a_te) = (agreement(&split.train), agreement(&split.test));
    let val_hist = crate::graph::histogram(&va, &bin_edges);
    Ok(ShiftReport {
        bin_edges,
        train_hist,
        val_hist,
        test_hist,
        train_mean_homophily: crate::stats::mean_std(&tr).0,
        test_mean_homophily: crate::stats::mean_std(&te).0,
        hist_l1,
        spurious_agreement_train: a_tr,
        spurious_agreement_test: a_te,
        spurious_corr_train: rescale(a_tr),
        spurious_corr_test: rescale(a_te),
    })
}

/// Writes the graph files plus `split.json`, `truth.json` and
/// `shift_report.json` into `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::graph::save_graph(&data.graph, &GraphFiles::in_dir(dir))?;
    crate::graph::save_split(&data.split, &dir.join("split.json"))?;
    crate::harness::write_atomic(
        &dir.join("truth.json"),
        serde_json::to_string(&data.truth)?.as_bytes(),
    )?;
    let report = shift_report(&data.graph, &data.split, &data.truth)?;
    crate::harness::write_atomic(
        &dir.join("shift_report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )
}

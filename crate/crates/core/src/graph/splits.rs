use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Train/validation/test node indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    /// Checks disjointness, index range and that train nodes are labeled.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let n = g.num_nodes();
        let mut seen = vec![false; n];
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &v in part {
                if v >= n {
                    return Err(Error::NodeOutOfRange { id: v, num_nodes: n });
                }
                if seen[v] {
                    return Err(Error::Split(format!("node {v} appears twice (again in {name})")));
                }
                seen[v] = true;
            }
        }
        if let Some(&v) = self.train.iter().find(|&&v| g.label(v).is_none()) {
            return Err(Error::Split(format!("train node {v} is unlabeled")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    Standard,
    SimulationLowToHigh,
    SimulationHighToLow,
}

impl std::str::FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(SettingKind::Standard),
            "simulation_low_to_high" => Ok(SettingKind::SimulationLowToHigh),
            "simulation_high_to_low" => Ok(SettingKind::SimulationHighToLow),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }
}

/// One evaluation regime: which nodes to train on and how the test set is
/// stratified by homophily.
///
/// `high_hom_test` and `low_hom_test` always partition `full_test`. For the
/// simulation kinds the group the regime is about is [`EvalSetting::target_test`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub kind: SettingKind,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub full_test: Vec<usize>,
    pub high_hom_test: Vec<usize>,
    pub low_hom_test: Vec<usize>,
    /// Degree-0 test nodes left out of the stratification.
    pub excluded_test: Vec<usize>,
}

impl EvalSetting {
    pub fn target_test(&self) -> &[usize] {
        match self.kind {
            SettingKind::Standard => &self.full_test,
            SettingKind::SimulationLowToHigh => &self.high_hom_test,
            SettingKind::SimulationHighToLow => &self.low_hom_test,
        }
    }
}

/// Homophily-median partition of a node set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MedianPartition {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    /// Degree-0 nodes, whose homophily is undefined.
    pub excluded: Vec<usize>,
}

/// Splits `idx` at the homophily median.
///
/// Nodes are ordered by `(homophily, id)`; the first `ceil(n/2)` form the low
/// half and the rest the high half, so every node above the median is high,
/// every node below it is low, and ties at the median are broken by id.
pub fn median_partition(g: &Graph, idx: &[usize]) -> Result<MedianPartition> {
    let mut scored = Vec::with_capacity(idx.len());
    let mut excluded = Vec::new();
    for &v in idx {
        match g.node_homophily(v)? {
            Some(h) => scored.push((h, v)),
            None => excluded.push(v),
        }
    }
    if scored.len() < 2 {
        return Err(Error::Insufficient(format!(
            "{} nodes with defined homophily, need at least 2",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cut = scored.len().div_ceil(2);
    let mut low: Vec<usize> = scored[..cut].iter().map(|&(_, v)| v).collect();
    let mut high: Vec<usize> = scored[cut..].iter().map(|&(_, v)| v).collect();
    low.sort_unstable();
    high.sort_unstable();
    excluded.sort_unstable();
    Ok(MedianPartition {
        high,
        low,
        excluded,
    })
}

fn stratified_test(g: &Graph, split: &NodeSplit) -> Result<MedianPartition> {
    median_partition(g, &split.test)
}

fn full_test(part: &MedianPartition) -> Vec<usize> {
    let mut full: Vec<usize> = part.high.iter().chain(&part.low).copied().collect();
    full.sort_unstable();
    full
}

/// Train on the whole train set; split the test set at its homophily median.
pub fn build_standard_setting(g: &Graph, split: &NodeSplit) -> Result<EvalSetting> {
    split.validate(g)?;
    let part = stratified_test(g, split)?;
    Ok(EvalSetting {
        kind: SettingKind::Standard,
        train_idx: split.train.clone(),
        val_idx: split.val.clone(),
        full_test: full_test(&part),
        high_hom_test: part.high,
        low_hom_test: part.low,
        excluded_test: part.excluded,
    })
}

/// Low-homophily train half evaluated on the high test half, and the
/// mirror image. Returned as `(low_to_high, high_to_low)`.
pub fn build_simulation_settings(g: &Graph, split: &NodeSplit) -> Result<(EvalSetting, EvalSetting)> {
    split.validate(g)?;
    let train = median_partition(g, &split.train)
        .map_err(|e| Error::Insufficient(format!("train set: {e}")))?;
    let test = stratified_test(g, split)?;
    let make = |kind, train_idx: Vec<usize>| EvalSetting {
        kind,
        train_idx,
        val_idx: split.val.clone(),
        full_test: full_test(&test),
        high_hom_test: test.high.clone(),
        low_hom_test: test.low.clone(),
        excluded_test: test.excluded.clone(),
    };
    Ok((
        make(SettingKind::SimulationLowToHigh, train.low),
        make(SettingKind::SimulationHighToLow, train.high),
    ))
}

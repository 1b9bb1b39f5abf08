//! Experiment orchestration: configs, multi-seed trials, sweeps and result
//! tables.
//!
//! Trial `t` of an experiment with base seed `s` generates its data (for
//! synthetic sources) and initializes its model from seed `s + t`, so two
//! experiments that differ only in the trainer are paired trial by trial.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbones::EncoderSpec;
use crate::error::{Error, Result};
use crate::graph::{
    build_simulation_settings, build_standard_setting, load_graph, load_split, EvalSetting, Graph,
    GraphFiles, NodeSplit, SettingKind,
};
use crate::similarity::{compute_patterns, Metric, NeighborPattern, SimilarityConfig};
use crate::stats::{mean_std, paired_t_test};
use crate::synthgen::{generate, SynthConfig};
use crate::trainers::{
    train, Accuracies, EpochRecord, TrainConfig, TrainOutcome, TrainerKind, K_RANGE, lambda_allowed,
};
use crate::TOOL_VERSION;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    /// A directory holding `edges.tsv`, `features.csv`, `labels.txt` and
    /// `split.json`.
    Files { dir: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub setting: SettingKind,
    pub backbone: EncoderSpec,
    pub train: TrainConfig,
    /// Decay factor and isolated-node policy; the metrics come from
    /// `train.z_metrics`.
    pub similarity: SimilarityConfig,
    pub trials: usize,
    /// Base seed; overrides the data and train seeds.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data: DataSource::default(),
            setting: SettingKind::Standard,
            backbone: EncoderSpec::default(),
            train: TrainConfig::default(),
            similarity: SimilarityConfig::default(),
            trials: 10,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        self.backbone.validate()?;
        self.train.validate()?;
        self.similarity.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed + trial as u64
    }
}

/// Graph and split for one trial.
pub fn load_data(source: &DataSource, seed: u64) -> Result<(Graph, NodeSplit)> {
    match source {
        DataSource::Synth(cfg) => {
            let d = generate(&SynthConfig { seed, ..cfg.clone() })?;
            Ok((d.graph, d.split))
        }
        DataSource::Files { dir } => {
            let (g, _) = load_graph(&GraphFiles::in_dir(dir))?;
            let split = load_split(&dir.join("split.json"))?;
            split.validate(&g)?;
            Ok((g, split))
        }
    }
}

pub fn build_setting(g: &Graph, split: &NodeSplit, kind: SettingKind) -> Result<EvalSetting> {
    match kind {
        SettingKind::Standard => build_standard_setting(g, split),
        SettingKind::SimulationLowToHigh => Ok(build_simulation_settings(g, split)?.0),
        SettingKind::SimulationHighToLow => Ok(build_simulation_settings(g, split)?.1),
    }
}

/// Patterns for every metric in `metrics`.
pub fn patterns_for(g: &Graph, sim: &SimilarityConfig, metrics: &[Metric]) -> Result<Vec<NeighborPattern>> {
    metrics
        .iter()
        .map(|&metric| compute_patterns(g, &SimilarityConfig { metric, ..*sim }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub accuracy: Accuracies,
    pub selected_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        MeanStd { mean, std }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub full_test: MeanStd,
    pub high_hom_test: MeanStd,
    pub low_hom_test: MeanStd,
    pub val: MeanStd,
}

impl Aggregate {
    pub fn of(trials: &[TrialResult]) -> Self {
        let col = |f: fn(&Accuracies) -> f64| -> MeanStd {
            MeanStd::of(&trials.iter().map(|t| f(&t.accuracy)).collect::<Vec<_>>())
        };
        Aggregate {
            full_test: col(|a| a.full_test),
            high_hom_test: col(|a| a.high_hom_test),
            low_hom_test: col(|a| a.low_hom_test),
            val: col(|a| a.val),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
}

impl ExperimentResult {
    pub fn trainer(&self) -> TrainerKind {
        self.config.train.trainer
    }

    pub fn column(&self, group: Group) -> Vec<f64> {
        self.trials.iter().map(|t| group.pick(&t.accuracy)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per trial.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "trial",
            "seed",
            "trainer",
            "full_test",
            "high_hom_test",
            "low_hom_test",
            "val",
            "selected_epoch",
        ])
        .map_err(csv_err)?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                self.trainer().to_string(),
                t.accuracy.full_test.to_string(),
                t.accuracy.high_hom_test.to_string(),
                t.accuracy.low_hom_test.to_string(),
                t.accuracy.val.to_string(),
                t.selected_epoch.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("result.json"), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join("result.csv"), self.to_csv()?.as_bytes())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    FullTest,
    HighHomTest,
    LowHomTest,
    Val,
}

impl Group {
    pub fn pick(self, a: &Accuracies) -> f64 {
        match self {
            Group::FullTest => a.full_test,
            Group::HighHomTest => a.high_hom_test,
            Group::LowHomTest => a.low_hom_test,
            Group::Val => a.val,
        }
    }
}

/// One training run on already-built inputs.
pub fn run_single(
    cfg: &ExperimentConfig,
    g: &Graph,
    setting: &EvalSetting,
    seed: u64,
) -> Result<TrainOutcome> {
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let patterns = if train_cfg.trainer == TrainerKind::Hei {
        patterns_for(g, &cfg.similarity, &train_cfg.z_metrics)?
    } else {
        Vec::new()
    };
    train(&train_cfg, &cfg.backbone, g, setting, &patterns)
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let seed = cfg.trial_seed(trial);
    let (g, split) = load_data(&cfg.data, seed)?;
    let setting = build_setting(&g, &split, cfg.setting)?;
    let out = run_single(cfg, &g, &setting, seed)?;
    Ok(TrialResult {
        trial,
        seed,
        accuracy: out.accuracy,
        selected_epoch: out.selected_epoch,
        history: out.history,
    })
}

/// Runs every trial (in parallel) and writes `result.json` / `result.csv`
/// when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            run_trial(cfg, t).map_err(|e| Error::Trial {
                trial: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = ExperimentResult {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        seeds: (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect(),
        aggregate: Aggregate::of(&trials),
        trials,
    };
    if let Some(dir) = &cfg.output_dir {
        result.write(dir)?;
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    Lambda,
    Metric,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "lambda" => Ok(SweepParam::Lambda),
            "metric" => Ok(SweepParam::Metric),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?} (expected K, lambda or metric)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Lambda => "lambda",
            SweepParam::Metric => "metric",
        }
    }

    /// Config with `value` applied, after checking it against the legal grid.
    /// `lambda` also accepts 0, which reduces HEI to ERM.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let bad = || Error::Config(format!("{} value {value:?} is outside the allowed grid", self.name()));
        match self {
            SweepParam::K => {
                let k: usize = value.parse().map_err(|_| bad())?;
                if !K_RANGE.contains(&k) {
                    return Err(bad());
                }
                cfg.train.k = k;
            }
            SweepParam::Lambda => {
                let l: f64 = value.parse().map_err(|_| bad())?;
                if !lambda_allowed(l) {
                    return Err(bad());
                }
                cfg.train.lambda = l;
            }
            SweepParam::Metric => {
                let m: Metric = value.parse().map_err(|_| bad())?;
                cfg.train.z_metrics = vec![m];
            }
        }
        let tag = format!("{}={value}", self.name());
        cfg.name = format!("{} {tag}", base.name);
        cfg.output_dir = base.output_dir.as_ref().map(|d| d.join(&tag));
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub results: Vec<ExperimentResult>,
}

impl SweepResult {
    /// One row per value with mean/std per test group.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            self.param.name(),
            "trainer",
            "full_mean",
            "full_std",
            "high_mean",
            "high_std",
            "low_mean",
            "low_std",
        ])
        .map_err(csv_err)?;
        for (v, r) in self.values.iter().zip(&self.results) {
            let a = &r.aggregate;
            w.write_record([
                v.clone(),
                r.trainer().to_string(),
                a.full_test.mean.to_string(),
                a.full_test.std.to_string(),
                a.high_hom_test.mean.to_string(),
                a.high_hom_test.std.to_string(),
                a.low_hom_test.mean.to_string(),
                a.low_hom_test.std.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Max − min of the per-value means of `group` over the given values.
    pub fn spread(&self, group: Group, values: &[&str]) -> Option<f64> {
        let means: Vec<f64> = self
            .values
            .iter()
            .zip(&self.results)
            .filter(|(v, _)| values.contains(&v.as_str()))
            .map(|(_, r)| mean_std(&r.column(group)).0)
            .collect();
        if means.is_empty() {
            return None;
        }
        let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }
}

pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[String]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let cfgs = values
        .iter()
        .map(|v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let results = cfgs.iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    let out = SweepResult {
        param,
        values: values.to_vec(),
        results,
    };
    if let Some(dir) = &base.output_dir {
        write_atomic(&dir.join("sweep.csv"), out.to_csv()?.as_bytes())?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub trainer: String,
    pub trials: usize,
    pub full_mean: f64,
    pub full_std: f64,
    pub high_mean: f64,
    pub high_std: f64,
    pub low_mean: f64,
    pub low_std: f64,
    /// Differences to the first row, paired by trial.
    pub delta_full: Option<f64>,
    pub delta_high: Option<f64>,
    pub delta_low: Option<f64>,
    /// One-sided paired t-test p-value that this row beats the first on
    /// the low-homophily group.
    pub p_low: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub markdown: String,
    pub csv: String,
}

/// Accuracy table in Full / High Hom / Low Hom layout; rows after the first
/// get paired deltas against it.
pub fn report(results: &[ExperimentResult]) -> Result<Report> {
    let Some(base) = results.first() else {
        return Err(Error::Insufficient("report needs at least one result".into()));
    };
    let mut rows = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let a = &r.aggregate;
        let paired = i > 0 && r.seeds == base.seeds;
        let delta = |g: Group| -> Option<f64> {
            paired.then(|| {
                let d: Vec<f64> = r.column(g).iter().zip(base.column(g)).map(|(x, y)| x - y).collect();
                mean_std(&d).0
            })
        };
        let p_low = if paired {
            paired_t_test(&r.column(Group::LowHomTest), &base.column(Group::LowHomTest)).map(|t| t.p_greater)
        } else {
            None
        };
        rows.push(ReportRow {
            name: r.config.name.clone(),
            trainer: r.trainer().to_string(),
            trials: r.trials.len(),
            full_mean: a.full_test.mean,
            full_std: a.full_test.std,
            high_mean: a.high_hom_test.mean,
            high_std: a.high_hom_test.std,
            low_mean: a.low_hom_test.mean,
            low_std: a.low_hom_test.std,
            delta_full: delta(Group::FullTest),
            delta_high: delta(Group::HighHomTest),
            delta_low: delta(Group::LowHomTest),
            p_low,
        });
    }

    let pct = |m: f64, s: f64| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s);
    let opt = |x: Option<f64>, scale: f64| x.map_or("".to_string(), |v| format!("{:+.2}", scale * v));
    let mut md = String::from(
        "| Name | Trainer | Full Test | High Hom Test | Low Hom Test | Δ Full | Δ High | Δ Low | p (Low) |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.name,
            r.trainer,
            pct(r.full_mean, r.full_std),
            pct(r.high_mean, r.high_std),
            pct(r.low_mean, r.low_std),
            opt(r.delta_full, 100.0),
            opt(r.delta_high, 100.0),
            opt(r.delta_low, 100.0),
            r.p_low.map_or(String::new(), |p| format!("{p:.4}")),
        ));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    Ok(Report {
        rows,
        markdown: md,
        csv: finish_csv(w)?,
    })
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(trainer: TrainerKind) -> ExperimentConfig {
        ExperimentConfig {
            name: trainer.to_string(),
            data: DataSource::Synth(SynthConfig {
                num_nodes: 240,
                mean_degree: 5,
                ..Default::default()
            }),
            backbone: EncoderSpec {
                hidden_dim: 8,
                num_layers: 1,
                ..Default::default()
            },
            train: TrainConfig {
                trainer,
                epochs: 15,
                warmup_epochs: 5,
                ..Default::default()
            },
            trials: 2,
            ..Default::default()
        }
    }

    #[test]
    fn single_trial_has_zero_std() {
        let r = run_experiment(&ExperimentConfig { trials: 1, ..tiny(TrainerKind::Erm) }).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.aggregate.full_test.std, 0.0);
        assert_eq!(r.aggregate.low_hom_test.std, 0.0);
        assert_eq!(r.seeds, vec![0]);
    }

    #[test]
    fn aggregate_recomputes_from_trials() {
        let r = run_experiment(&tiny(TrainerKind::Erm)).unwrap();
        let fresh = Aggregate::of(&r.trials);
        assert_eq!(fresh, r.aggregate);
        let (m, _) = mean_std(&r.column(Group::FullTest));
        assert_eq!(m, r.aggregate.full_test.mean);
    }

    #[test]
    fn identical_runs_write_identical_files() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for d in [&d1, &d2] {
            let cfg = ExperimentConfig {
                output_dir: Some(d.path().to_path_buf()),
                ..tiny(TrainerKind::Hei)
            };
            run_experiment(&cfg).unwrap();
        }
        for f in ["result.json", "result.csv"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            // output_dir differs, so compare with it blanked.
            let strip = |v: Vec<u8>, d: &Path| String::from_utf8(v).unwrap().replace(&d.display().to_string(), "");
            assert_eq!(strip(a, d1.path()), strip(b, d2.path()), "{f}");
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = tiny(TrainerKind::Hei);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("trials = 3\n[train]\ntrainer = \"vrex\"\nK = 4\n").unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.train.k, 4);
        assert_eq!(partial.train.trainer, TrainerKind::Vrex);
        assert!(ExperimentConfig::from_toml("trials = \"x\"").is_err());
        assert!(ExperimentConfig { trials: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn sweep_validates_values() {
        let base = tiny(TrainerKind::Hei);
        assert!(SweepParam::K.apply(&base, "13").is_err());
        assert!(SweepParam::K.apply(&base, "1").is_err());
        assert!(SweepParam::Lambda.apply(&base, "0.5").is_err());
        assert_eq!(SweepParam::Lambda.apply(&base, "0.001").unwrap().train.lambda, 1e-3);
        assert_eq!(SweepParam::Lambda.apply(&base, "0").unwrap().train.lambda, 0.0);
        assert!(SweepParam::Metric.apply(&base, "cosine").is_err());
        assert!("eta".parse::<SweepParam>().is_err());
    }

    #[test]
    fn sweep_over_metrics_tags_rows() {
        let base = ExperimentConfig { trials: 1, ..tiny(TrainerKind::Hei) };
        let values: Vec<String> = Metric::ALL.iter().map(|m| m.to_string()).collect();
        let s = sweep(&base, SweepParam::Metric, &values).unwrap();
        assert_eq!(s.results.len(), 3);
        for (v, r) in s.values.iter().zip(&s.results) {
            assert_eq!(r.config.train.z_metrics[0].to_string(), *v);
        }
        let csv = s.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn report_layout_and_parse_back() {
        let erm = run_experiment(&tiny(TrainerKind::Erm)).unwrap();
        assert!(report(&[]).is_err());
        let one = report(std::slice::from_ref(&erm)).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(one.rows[0].delta_low.is_none());
        let vrex = run_experiment(&tiny(TrainerKind::Vrex)).unwrap();
        let two = report(&[erm.clone(), vrex.clone()]).unwrap();
        let d = two.rows[1].delta_low.unwrap();
        let expect = vrex.aggregate.low_hom_test.mean - erm.aggregate.low_hom_test.mean;
        assert!((d - expect).abs() < 1e-12);
        assert_eq!(parse_report_csv(&two.csv).unwrap(), two.rows);
        assert!(two.markdown.contains("Low Hom Test"));
    }

    #[test]
    fn trial_errors_carry_the_index() {
        let cfg = ExperimentConfig {
            data: DataSource::Files { dir: PathBuf::from("/nonexistent/dir") },
            ..tiny(TrainerKind::Erm)
        };
        match run_experiment(&cfg) {
            Err(Error::Trial { trial, .. }) => assert!(trial < 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }
}

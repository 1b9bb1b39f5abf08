//! `hei`: generate synthetic data, estimate neighbor patterns, build
//! evaluation splits, train models and run experiments.
//!
//! Configuration is layered: built-in defaults, then command-line flags, then
//! `--config <file>` on top (file values win, key by key).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hei_core::graph::{load_graph, save_split, GraphFiles};
use hei_core::harness::{
    build_setting, load_data, parse_report_csv, report, run_experiment, run_single, sweep,
    write_atomic, ExperimentConfig, ExperimentResult, SweepParam,
};
use hei_core::nn::checkpoint;
use hei_core::similarity::{compute_patterns, Metric, SimilarityConfig};
use hei_core::synthgen::{generate, write_dataset, SynthConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hei", version, about = "Heterophily-guided environment inference experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset into a directory.
    Synth(SynthArgs),
    /// Write per-node neighbor patterns as CSV.
    Patterns(PatternArgs),
    /// Write the evaluation setting (train/val/test groups) as JSON.
    Split(SplitArgs),
    /// Train a single model (trial 0 of the experiment config).
    Train(RunArgs),
    /// Run all trials of an experiment.
    Experiment(RunArgs),
    /// Run one experiment per value of K, lambda or metric.
    Sweep(SweepArgs),
    /// Tabulate result.json files.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with `SynthConfig` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_nodes: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    mean_degree: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other field, as `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct PatternArgs {
    /// Dataset directory (`edges.tsv`, `features.csv`, `labels.txt`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "sim_rank")]
    metric: Metric,
    #[arg(long, default_value_t = 0.6)]
    decay_c: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset directory, including `split.json`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "standard")]
    setting: hei_core::graph::SettingKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Experiment TOML; its values override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train on a dataset directory instead of synthetic data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    trainer: Option<String>,
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long = "k")]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_rho: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Any config path, as `dotted.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// `K`, `lambda` or `metric`.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// `result.json` files; the first is the baseline for paired deltas.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set_path(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, init) = parts.split_last().context("empty key")?;
    let mut cur = root;
    for p in init {
        let table = cur.as_table_mut().with_context(|| format!("{key}: {p} is not a table"))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    // Bare words that are not valid TOML values are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    cur.as_table_mut()
        .with_context(|| format!("{key}: parent is not a table"))?
        .insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').with_context(|| format!("expected KEY=VALUE, got {s:?}"))
}

// `train.K` is accepted as an alias of `train.k`; fold it in per layer so
// the merge never sees both spellings.
const ALIASES: &[(&str, &str)] = &[("train.K", "train.k")];

fn canonical_key(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, c)| c)
}

fn canonicalize(v: &mut toml::Value) {
    for (alias, canon) in ALIASES {
        let (table, a) = alias.rsplit_once('.').unwrap();
        let c = canon.rsplit_once('.').unwrap().1;
        if let Some(t) = v.get_mut(table).and_then(|t| t.as_table_mut()) {
            if let Some(x) = t.remove(a) {
                t.insert(c.to_string(), x);
            }
        }
    }
}

fn layered<T>(defaults: &T, flags: &[(String, String)], file: Option<&Path>) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut v = toml::Value::try_from(defaults)?;
    for (k, raw) in flags {
        set_path(&mut v, canonical_key(k), raw)?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut top: toml::Value = toml::from_str(&text).map_err(|e| hei_core::Error::Config(e.to_string()))?;
        canonicalize(&mut top);
        merge(&mut v, top);
    }
    Ok(v.try_into().map_err(|e: toml::de::Error| hei_core::Error::Config(e.to_string()))?)
}

impl ConfigArgs {
    fn flags(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let quote = |s: &Option<String>| s.as_ref().map(|s| format!("{s:?}"));
        push("setting", quote(&self.setting));
        push("train.trainer", quote(&self.trainer));
        push("backbone.kind", quote(&self.backbone));
        push("trials", self.trials.map(|x| x.to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("train.epochs", self.epochs.map(|x| x.to_string()));
        push("train.warmup_epochs", self.warmup_epochs.map(|x| x.to_string()));
        push("train.k", self.k.map(|x| x.to_string()));
        push("train.lambda", self.lambda.map(|x| format!("{x:?}")));
        push("train.lr", self.lr.map(|x| format!("{x:?}")));
        push("train.lr_rho", self.lr_rho.map(|x| format!("{x:?}")));
        push("train.weight_decay", self.weight_decay.map(|x| format!("{x:?}")));
        for s in &self.sets {
            let (k, v) = split_kv(s)?;
            out.push((k.to_string(), v.to_string()));
        }
        Ok(out)
    }

    fn build(&self, out: Option<&PathBuf>) -> Result<ExperimentConfig> {
        let mut defaults = ExperimentConfig::default();
        if let Some(dir) = &self.data_dir {
            defaults.data = hei_core::harness::DataSource::Files { dir: dir.clone() };
        }
        let mut cfg: ExperimentConfig = layered(&defaults, &self.flags()?, self.config.as_deref())?;
        if let Some(o) = out {
            cfg.output_dir = Some(o.clone());
        }
        // Parse enum strings early so typos fail before any work starts.
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(n) = a.num_nodes {
        flags.push(("num_nodes".to_string(), n.to_string()));
    }
    if let Some(c) = a.num_classes {
        flags.push(("num_classes".to_string(), c.to_string()));
    }
    if let Some(d) = a.mean_degree {
        flags.push(("mean_degree".to_string(), d.to_string()));
    }
    if let Some(s) = a.seed {
        flags.push(("seed".to_string(), s.to_string()));
    }
    for s in &a.sets {
        let (k, v) = split_kv(s)?;
        flags.push((k.to_string(), v.to_string()));
    }
    let cfg: SynthConfig = layered(&SynthConfig::default(), &flags, a.config.as_deref())?;
    let data = generate(&cfg)?;
    write_dataset(&data, &a.out)?;
    write_atomic(&a.out.join("synth.toml"), toml::to_string(&cfg)?.as_bytes())?;
    println!(
        "wrote {} nodes, {} edges to {}",
        data.graph.num_nodes(),
        data.graph.num_edges(),
        a.out.display()
    );
    Ok(())
}

fn cmd_patterns(a: PatternArgs) -> Result<()> {
    let (g, _) = load_graph(&GraphFiles::in_dir(&a.data))?;
    let cfg = SimilarityConfig {
        decay_c: a.decay_c,
        ..SimilarityConfig::new(a.metric)
    };
    cfg.validate()?;
    compute_patterns(&g, &cfg)?.save(&a.out)?;
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let (g, split) = load_data(&hei_core::harness::DataSource::Files { dir: a.data.clone() }, 0)?;
    let setting = build_setting(&g, &split, a.setting)?;
    write_json(&a.out, &setting)
}

fn cmd_train(a: RunArgs) -> Result<()> {
    let cfg = a.cfg.build(a.out.as_ref())?;
    let seed = cfg.trial_seed(0);
    let (g, split) = load_data(&cfg.data, seed)?;
    let setting = build_setting(&g, &split, cfg.setting)?;
    let out = run_single(&cfg, &g, &setting, seed)?;
    println!("{}", serde_json::to_string_pretty(&out.accuracy)?);
    if let Some(dir) = &cfg.output_dir {
        out.write_history(&dir.join("history.jsonl"))?;
        write_json(&dir.join("accuracy.json"), &out.accuracy)?;
        checkpoint::save(&out.store, &dir.join("model.bin"), &dir.join("model.json"))?;
        save_split(&split, &dir.join("split.json"))?;
        write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
        if let Some(env) = &out.final_assignment {
            write_json(&dir.join("environments.json"), env)?;
        }
    }
    Ok(())
}

fn cmd_experiment(a: RunArgs) -> Result<()> {
    let cfg = a.cfg.build(a.out.as_ref())?;
    let r = run_experiment(&cfg)?;
    let rep = report(std::slice::from_ref(&r))?;
    print!("{}", rep.markdown);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.cfg.build(a.out.as_ref())?;
    let param: SweepParam = a.param.parse()?;
    if a.values.is_empty() {
        bail!(hei_core::Error::Config("--values is empty".into()));
    }
    let s = sweep(&cfg, param, &a.values)?;
    print!("{}", s.to_csv()?);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let results = a
        .results
        .iter()
        .map(|p| ExperimentResult::load(p))
        .collect::<hei_core::Result<Vec<_>>>()?;
    let rep = report(&results)?;
    // Guard against a table that would not read back.
    parse_report_csv(&rep.csv)?;
    print!("{}", rep.markdown);
    if let Some(dir) = &a.out {
        write_atomic(&dir.join("report.md"), rep.markdown.as_bytes())?;
        write_atomic(&dir.join("report.csv"), rep.csv.as_bytes())?;
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<hei_core::Error>() {
        Some(inner) => inner.kind(),
        None if e.downcast_ref::<toml::ser::Error>().is_some() => "serde",
        None => "cli",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Patterns(a) => cmd_patterns(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Experiment(a) => cmd_experiment(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": format!("{e:#}"), "kind": error_kind(&e) });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

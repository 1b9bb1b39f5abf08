//! Training procedures: ERM, V-REx over random partitions, EERM-lite over
//! edge-dropped graphs, and HEI with an environment classifier over
//! neighbor patterns.
//!
//! All trainers are full-batch and single-threaded, so a run is a pure
//! function of its inputs and seed.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{accuracy, Batch, EncoderSpec, GraphInput, Model};
use crate::error::{Error, Result};
use crate::graph::{EvalSetting, Graph};
use crate::nn::{Adam, AdamConfig, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::similarity::{pattern_matrix, Metric, NeighborPattern};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    #[default]
    Erm,
    Vrex,
    EermLite,
    Hei,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Erm => "erm",
            TrainerKind::Vrex => "vrex",
            TrainerKind::EermLite => "eerm_lite",
            TrainerKind::Hei => "hei",
        }
    }

    pub fn uses_envs(self) -> bool {
        self != TrainerKind::Erm
    }
}

impl std::fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "erm" => Ok(TrainerKind::Erm),
            "vrex" | "v_rex" => Ok(TrainerKind::Vrex),
            "eerm_lite" | "eerm" => Ok(TrainerKind::EermLite),
            "hei" => Ok(TrainerKind::Hei),
            other => Err(Error::Config(format!("unknown trainer {other:?}"))),
        }
    }
}

/// Which epoch's parameters are kept at the end of training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best validation accuracy over all epochs (earliest on ties).
    #[default]
    BestVal,
    /// Best validation accuracy from epoch `warmup_epochs` on.
    BestValAfterWarmup,
    Last,
}

pub const LAMBDA_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];
/// True for 0 (plain ERM through the HEI loop) and the grid values.
pub fn lambda_allowed(l: f64) -> bool {
    l == 0.0 || LAMBDA_GRID.iter().any(|&g| (g - l).abs() <= 1e-12 * g)
}
pub const K_RANGE: std::ops::RangeInclusive<usize> = 2..=12;
pub const RHO_HIDDEN_CHOICES: [usize; 3] = [16, 32, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trainer: TrainerKind,
    pub epochs: usize,
    /// HEI only: epochs of plain ERM before environments are inferred.
    pub warmup_epochs: usize,
    /// Number of environments.
    #[serde(alias = "K")]
    pub k: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Environment-classifier learning rate; at most `lr`.
    pub lr_rho: f64,
    pub weight_decay: f64,
    /// EERM-lite: drop rate of the last environment.
    pub drop_rate_max: f64,
    pub seed: u64,
    /// Similarity metrics whose patterns are stacked into the classifier input.
    pub z_metrics: Vec<Metric>,
    pub rho_hidden: usize,
    /// Descent steps on each environment head per epoch.
    pub m_inner: usize,
    /// Ascent steps on the environment classifier per epoch.
    pub rho_steps: usize,
    /// Cut the encoder gradient through the environment-head branch of the
    /// penalty.
    pub stop_grad_env_branch: bool,
    /// Standardize pattern columns (train mean/std) before the classifier.
    pub standardize_z: bool,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trainer: TrainerKind::Erm,
            epochs: 200,
            warmup_epochs: 50,
            k: 6,
            lambda: 1.0,
            lr: 0.01,
            lr_rho: 0.001,
            weight_decay: 5e-4,
            drop_rate_max: 0.3,
            seed: 0,
            z_metrics: vec![Metric::SimRank],
            rho_hidden: 32,
            m_inner: 1,
            rho_steps: 1,
            stop_grad_env_branch: false,
            standardize_z: true,
            selection: Selection::BestVal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !lambda_allowed(self.lambda) {
            return bad(format!("lambda must be 0 or one of {LAMBDA_GRID:?}, got {}", self.lambda));
        }
        if self.trainer.uses_envs() && !K_RANGE.contains(&self.k) {
            return bad(format!("K must lie in [2, 12], got {}", self.k));
        }
        match self.trainer {
            TrainerKind::Hei => {
                if self.warmup_epochs >= self.epochs {
                    return bad(format!(
                        "warmup_epochs {} must be below epochs {}",
                        self.warmup_epochs, self.epochs
                    ));
                }
                if !(self.lr_rho > 0.0) || self.lr_rho > self.lr {
                    return bad(format!("lr_rho must lie in (0, lr], got {}", self.lr_rho));
                }
                if self.z_metrics.is_empty() {
                    return bad("z_metrics is empty".into());
                }
                if !RHO_HIDDEN_CHOICES.contains(&self.rho_hidden) {
                    return bad(format!("rho_hidden must be 16, 32 or 64, got {}", self.rho_hidden));
                }
                if self.m_inner == 0 || self.rho_steps == 0 {
                    return bad("m_inner and rho_steps must be at least 1".into());
                }
            }
            TrainerKind::EermLite if !(0.0..=1.0).contains(&self.drop_rate_max) => {
                return bad(format!("drop_rate_max must lie in [0, 1], got {}", self.drop_rate_max));
            }
            _ => {}
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const MODEL_STREAM: u64 = 10;
const PARTITION_STREAM: u64 = 11;
const AUGMENT_STREAM: u64 = 12;
const RHO_STREAM: u64 = 13;

// ---------------------------------------------------------------------------
// Objective pieces

/// `ρ`: two-layer MLP from patterns to a softmax over `K` environments.
#[derive(Clone, Debug)]
pub struct EnvClassifier {
    pub mlp: Mlp,
    pub k: usize,
}

impl EnvClassifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        in_dim: usize,
        hidden: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        EnvClassifier {
            mlp: Mlp::new(store, "rho", &[in_dim, hidden, k], false, rng),
            k,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let out = self.mlp.forward(tape, store, z)?;
        Ok(tape.softmax(out))
    }
}

/// Soft environment weights of the train nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvAssignment {
    /// `N_train x K`, row-stochastic.
    pub weights: Tensor,
    /// Argmax per row; used for reporting only.
    pub hard: Vec<usize>,
}

impl EnvAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.weights.cols()];
        for &k in &self.hard {
            out[k] += 1;
        }
        out
    }

    /// Largest deviation of a row sum from 1, or of an entry below 0.
    pub fn max_stochastic_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.weights.rows() {
            let row = self.weights.row(i);
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            for &w in row {
                worst = worst.max(-w);
            }
        }
        worst
    }
}

pub fn env_weights(rho: &EnvClassifier, store: &ParamStore, z: &Tensor) -> Result<EnvAssignment> {
    if !z.is_finite() {
        return Err(Error::NonFinite("neighbor patterns".into()));
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let w = rho.forward(&mut tape, store, zv)?;
    let weights = tape.value(w).clone();
    let hard = weights.argmax_rows();
    Ok(EnvAssignment { weights, hard })
}

/// Mean cross entropy: the plain risk `R(ω, Φ)`.
pub fn erm_risk(tape: &mut Tape, logits: Var, labels: Rc<[usize]>) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Insufficient("risk over an empty node set".into()));
    }
    tape.mean_ce(logits, labels)
}

/// `R_k = (1/N_train) Σ_v w_vk · CE_v` for column `k` of `weights`.
pub fn soft_env_risk(
    tape: &mut Tape,
    logits: Var,
    labels: Rc<[usize]>,
    weights: Var,
    k: usize,
) -> Result<Var> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Insufficient("risk over an empty node set".into()));
    }
    let col = tape.select_col(weights, k)?;
    tape.weighted_ce(logits, labels, col, n as f64)
}

/// All `K` soft risks of one set of logits.
pub fn soft_env_risks(tape: &mut Tape, logits: Var, labels: Rc<[usize]>, weights: Var) -> Result<Vec<Var>> {
    let k = tape.value(weights).cols();
    (0..k)
        .map(|j| soft_env_risk(tape, logits, labels.clone(), weights, j))
        .collect()
}

/// `Σ_k [R_k(ω, Φ) − R_k(ω_k, Φ)]`.
pub fn invariance_penalty(
    tape: &mut Tape,
    shared_logits: Var,
    env_logits: &[Var],
    labels: Rc<[usize]>,
    weights: Var,
) -> Result<Var> {
    let k = tape.value(weights).cols();
    if env_logits.len() != k {
        return Err(Error::Shape(format!(
            "{} environment heads for {k} weight columns",
            env_logits.len()
        )));
    }
    let mut gaps = Vec::with_capacity(k);
    for (j, &el) in env_logits.iter().enumerate() {
        let shared = soft_env_risk(tape, shared_logits, labels.clone(), weights, j)?;
        let own = soft_env_risk(tape, el, labels.clone(), weights, j)?;
        gaps.push(tape.sub(shared, own)?);
    }
    tape.add_all(&gaps)
}

/// Population variance of scalar nodes. Works on offsets from the first
/// entry, so equal inputs give exactly 0.
pub fn variance(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let Some(&first) = xs.first() else {
        return Err(Error::Insufficient("variance of no values".into()));
    };
    let xs = xs
        .iter()
        .map(|&x| tape.sub(x, first))
        .collect::<Result<Vec<_>>>()?;
    let k = xs.len() as f64;
    let total = tape.add_all(&xs)?;
    let mean = tape.scale(total, 1.0 / k);
    let mut sq = Vec::with_capacity(xs.len());
    for &x in &xs {
        let d = tape.sub(x, mean)?;
        sq.push(tape.mul(d, d)?);
    }
    let s = tape.add_all(&sq)?;
    Ok(tape.scale(s, 1.0 / k))
}

/// `Σ_k R_k + λ · Var(R_1..R_K)`; returns `(objective, variance)`.
pub fn vrex_objective(tape: &mut Tape, risks: &[Var], lambda: f64) -> Result<(Var, Var)> {
    let sum = tape.add_all(risks)?;
    let var = variance(tape, risks)?;
    if lambda == 0.0 {
        return Ok((sum, var));
    }
    let pen = tape.scale(var, lambda);
    Ok((tape.add(sum, pen)?, var))
}

/// Plain-number version of [`vrex_objective`].
pub fn vrex_value(risks: &[f64], lambda: f64) -> f64 {
    let first = risks.first().copied().unwrap_or(0.0);
    let shifted: Vec<f64> = risks.iter().map(|r| r - first).collect();
    let (_, std) = crate::stats::mean_std(&shifted);
    risks.iter().sum::<f64>() + lambda * std * std
}

/// Column-wise standardization with statistics from `t` itself; constant
/// columns are only centered.
pub fn standardize_cols(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for c in 0..t.cols() {
        let col: Vec<f64> = (0..t.rows()).map(|r| t.get(r, c)).collect();
        let (mean, std) = crate::stats::mean_std(&col);
        let s = if std > 1e-12 { std } else { 1.0 };
        for r in 0..t.rows() {
            out.set(r, c, (t.get(r, c) - mean) / s);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Augmented environments

/// Drop rate of environment `k` out of `num_envs`: a ladder from 0 (the
/// original graph) to `drop_rate_max`.
pub fn env_drop_rate(k: usize, num_envs: usize, drop_rate_max: f64) -> f64 {
    if num_envs <= 1 {
        return 0.0;
    }
    k as f64 / (num_envs - 1) as f64 * drop_rate_max
}

/// `K` copies of `g` with each undirected edge of copy `k` dropped
/// independently at [`env_drop_rate`].
pub fn make_augmented_envs(g: &Graph, k: usize, drop_rate_max: f64, seed: u64) -> Result<Vec<Graph>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 environments, got {k}")));
    }
    let edges = g.edges();
    let mut rng = stream(seed, AUGMENT_STREAM);
    (0..k)
        .map(|j| {
            let rate = env_drop_rate(j, k, drop_rate_max);
            if rate == 0.0 {
                return Ok(g.clone());
            }
            let kept: Vec<(usize, usize)> = edges
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() >= rate)
                .collect();
            g.with_edges(&kept)
        })
        .collect()
}

/// Seeded partition of `idx` into `k` near-equal random groups.
pub fn random_partition(idx: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || idx.len() < k {
        return Err(Error::Insufficient(format!(
            "cannot split {} train nodes into {k} environments",
            idx.len()
        )));
    }
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.shuffle(&mut stream(seed, PARTITION_STREAM));
    let mut parts = vec![Vec::new(); k];
    for (i, &pos) in order.iter().enumerate() {
        parts[i % k].push(pos);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// Results

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    /// HEI: invariance penalty before the classifier ascent step.
    /// V-REx / EERM-lite: variance of environment risks.
    pub penalty: Option<f64>,
    /// HEI: penalty re-evaluated right after the ascent step, all other
    /// parameters unchanged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_after_ascent: Option<f64>,
    pub env_sizes: Vec<usize>,
    pub risks: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub val: f64,
    pub full_test: f64,
    pub high_hom_test: f64,
    pub low_hom_test: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: TrainerKind,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub accuracy: Accuracies,
    pub model: Model,
    pub store: ParamStore,
    /// HEI: final hard environment id per train node.
    pub final_assignment: Option<EnvAssignment>,
}

impl TrainOutcome {
    /// Writes the history as JSON lines.
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for rec in &self.history {
            serde_json::to_writer(&mut buf, rec)?;
            buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        crate::harness::write_atomic(path, &buf)
    }
}

// ---------------------------------------------------------------------------
// Training loop plumbing

struct Selector {
    policy: Selection,
    start: usize,
    best: Option<(usize, f64, Vec<Tensor>)>,
}

impl Selector {
    fn new(policy: Selection, warmup: usize) -> Self {
        let start = match policy {
            Selection::BestValAfterWarmup => warmup,
            _ => 0,
        };
        Selector {
            policy,
            start,
            best: None,
        }
    }

    fn observe(&mut self, epoch: usize, val_acc: f64, store: &ParamStore) {
        if self.policy == Selection::Last || epoch < self.start {
            return;
        }
        if self.best.as_ref().is_none_or(|b| val_acc > b.1) {
            self.best = Some((epoch, val_acc, store.snapshot()));
        }
    }

    /// Restores the chosen parameters; returns the chosen epoch.
    fn finish(self, store: &mut ParamStore, last_epoch: usize) -> usize {
        match self.best {
            Some((epoch, _, snap)) => {
                store.restore(&snap);
                epoch
            }
            None => last_epoch,
        }
    }
}

struct Run {
    store: ParamStore,
    model: Model,
    opt: Adam,
    input: GraphInput,
    train: Batch,
    labels: Rc<[usize]>,
    val: Batch,
    val_labels: Vec<usize>,
    selector: Selector,
    history: Vec<EpochRecord>,
}

impl Run {
    fn new(cfg: &TrainConfig, spec: &EncoderSpec, g: &Graph, setting: &EvalSetting) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        if setting.train_idx.is_empty() {
            return Err(Error::Split("empty training set".into()));
        }
        if setting.val_idx.is_empty() && cfg.selection != Selection::Last {
            return Err(Error::Split("validation-based selection needs a validation set".into()));
        }
        let mut rng = stream(cfg.seed, MODEL_STREAM);
        let mut store = ParamStore::new();
        let model = Model::new(spec, &mut store, g.num_nodes(), g.feature_dim(), g.num_classes(), &mut rng)?;
        let opt = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay), model.params(), &store);
        let input = GraphInput::prepare(spec, g);
        let train = input.batch(&setting.train_idx)?;
        let labels: Rc<[usize]> = g.labels_of(&setting.train_idx)?.into();
        let val = input.batch(&setting.val_idx)?;
        let val_labels = g.labels_of(&setting.val_idx)?;
        Ok(Run {
            store,
            model,
            opt,
            input,
            train,
            labels,
            val,
            val_labels,
            selector: Selector::new(cfg.selection, cfg.warmup_epochs),
            history: Vec::new(),
        })
    }

    fn val_acc(&self) -> Result<f64> {
        if self.val.is_empty() {
            return Ok(0.0);
        }
        Ok(accuracy(&self.model.predict(&self.store, &self.val)?, &self.val_labels))
    }

    /// One plain ERM step; returns the loss before the step.
    fn erm_step(&mut self) -> Result<f64> {
        self.store.zero_grads();
        let mut tape = Tape::new();
        let logits = self.model.logits(&mut tape, &self.store, &self.train)?;
        let loss = erm_risk(&mut tape, logits, self.labels.clone())?;
        tape.backward(loss, &mut self.store)?;
        self.opt.step(&mut self.store)?;
        Ok(tape.value(loss).item())
    }

    fn end_epoch(&mut self, mut rec: EpochRecord) -> Result<()> {
        if !rec.train_loss.is_finite() {
            return Err(Error::NonFinite(format!("train loss at epoch {}", rec.epoch)));
        }
        rec.val_acc = self.val_acc()?;
        self.selector.observe(rec.epoch, rec.val_acc, &self.store);
        self.history.push(rec);
        Ok(())
    }

    fn finish(
        mut self,
        trainer: TrainerKind,
        g: &Graph,
        setting: &EvalSetting,
        final_assignment: Option<EnvAssignment>,
    ) -> Result<TrainOutcome> {
        let last = self.history.len().saturating_sub(1);
        let selected_epoch = self.selector.finish(&mut self.store, last);
        let accuracy = evaluate(&self.model, &self.store, &self.input, g, setting)?;
        Ok(TrainOutcome {
            trainer,
            history: self.history,
            selected_epoch,
            accuracy,
            model: self.model,
            store: self.store,
            final_assignment,
        })
    }
}

/// Accuracy on every node group of `setting`. Empty groups score 0.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    input: &GraphInput,
    g: &Graph,
    setting: &EvalSetting,
) -> Result<Accuracies> {
    let acc = |idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let b = input.batch(idx)?;
        Ok(accuracy(&model.predict(store, &b)?, &g.labels_of(idx)?))
    };
    Ok(Accuracies {
        train: acc(&setting.train_idx)?,
        val: acc(&setting.val_idx)?,
        full_test: acc(&setting.full_test)?,
        high_hom_test: acc(&setting.high_hom_test)?,
        low_hom_test: acc(&setting.low_hom_test)?,
    })
}

/// Dispatches on `cfg.trainer`. `patterns` is only read by HEI.
pub fn train(
    cfg: &TrainConfig,
    spec: &EncoderSpec,
    g: &Graph,
    setting: &EvalSetting,
    patterns: &[NeighborPattern],
) -> Result<TrainOutcome> {
    match cfg.trainer {
        TrainerKind::Erm => train_erm(cfg, spec, g, setting),
        TrainerKind::Vrex => train_vrex(cfg, spec, g, setting),
        TrainerKind::EermLite => train_eerm_lite(cfg, spec, g, setting),
        TrainerKind::Hei => train_hei(cfg, spec, g, setting, patterns),
    }
}

pub fn train_erm(cfg: &TrainConfig, spec: &EncoderSpec, g: &Graph, setting: &EvalSetting) -> Result<TrainOutcome> {
    let mut run = Run::new(cfg, spec, g, setting)?;
    for epoch in 0..cfg.epochs {
        let train_loss = run.erm_step()?;
        run.end_epoch(EpochRecord {
            epoch,
            train_loss,
            ..Default::default()
        })?;
    }
    run.finish(TrainerKind::Erm, g, setting, None)
}

pub fn train_vrex(cfg: &TrainConfig, spec: &EncoderSpec, g: &Graph, setting: &EvalSetting) -> Result<TrainOutcome> {
    let mut run = Run::new(cfg, spec, g, setting)?;
    let parts = random_partition(&setting.train_idx, cfg.k, cfg.seed)?;
    let n = setting.train_idx.len();
    let env_sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
    // One-hot membership columns scaled so that the soft risk of column k is
    // the plain mean over partition k.
    let mut w = Tensor::zeros(n, cfg.k);
    for (k, p) in parts.iter().enumerate() {
        let s = n as f64 / p.len() as f64;
        for &i in p {
            w.set(i, k, s);
        }
    }
    for epoch in 0..cfg.epochs {
        run.store.zero_grads();
        let mut tape = Tape::new();
        let logits = run.model.logits(&mut tape, &run.store, &run.train)?;
        let wv = tape.constant(w.clone());
        let risks = soft_env_risks(&mut tape, logits, run.labels.clone(), wv)?;
        let (obj, var) = vrex_objective(&mut tape, &risks, cfg.lambda)?;
        tape.backward(obj, &mut run.store)?;
        run.opt.step(&mut run.store)?;
        let rec = EpochRecord {
            epoch,
            train_loss: tape.value(obj).item(),
            penalty: Some(tape.value(var).item()),
            env_sizes: env_sizes.clone(),
            risks: risks.iter().map(|&r| tape.value(r).item()).collect(),
            ..Default::default()
        };
        run.end_epoch(rec)?;
    }
    run.finish(TrainerKind::Vrex, g, setting, None)
}

pub fn train_eerm_lite(
    cfg: &TrainConfig,
    spec: &EncoderSpec,
    g: &Graph,
    setting: &EvalSetting,
) -> Result<TrainOutcome> {
    let mut run = Run::new(cfg, spec, g, setting)?;
    let envs = make_augmented_envs(g, cfg.k, cfg.drop_rate_max, cfg.seed)?;
    let batches = envs
        .iter()
        .map(|e| GraphInput::prepare(spec, e).batch(&setting.train_idx))
        .collect::<Result<Vec<_>>>()?;
    let n = setting.train_idx.len();
    for epoch in 0..cfg.epochs {
        run.store.zero_grads();
        let mut tape = Tape::new();
        let mut risks = Vec::with_capacity(cfg.k);
        for b in &batches {
            let logits = run.model.logits(&mut tape, &run.store, b)?;
            risks.push(erm_risk(&mut tape, logits, run.labels.clone())?);
        }
        let (obj, var) = vrex_objective(&mut tape, &risks, cfg.lambda)?;
        tape.backward(obj, &mut run.store)?;
        run.opt.step(&mut run.store)?;
        let rec = EpochRecord {
            epoch,
            train_loss: tape.value(obj).item(),
            penalty: Some(tape.value(var).item()),
            env_sizes: vec![n; cfg.k],
            risks: risks.iter().map(|&r| tape.value(r).item()).collect(),
            ..Default::default()
        };
        run.end_epoch(rec)?;
    }
    run.finish(TrainerKind::EermLite, g, setting, None)
}

// ---------------------------------------------------------------------------
// HEI

/// Environment heads and classifier added to a [`Model`] for HEI.
#[derive(Clone, Debug)]
pub struct HeiParts {
    pub env_heads: Vec<Linear>,
    pub rho: EnvClassifier,
}

impl HeiParts {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        model: &Model,
        z_dim: usize,
        rho_hidden: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let (h, c) = (model.head.in_dim, model.head.out_dim);
        let env_heads = (0..k)
            .map(|j| Linear {
                weight: store.add(format!("env{j}.weight"), Tensor::zeros(h, c)),
                bias: store.add(format!("env{j}.bias"), Tensor::zeros(1, c)),
                in_dim: h,
                out_dim: c,
            })
            .collect();
        let rho = EnvClassifier::new(store, z_dim, rho_hidden, k, rng);
        HeiParts { env_heads, rho }
    }

    /// Sets every environment head to a copy of the shared head.
    pub fn clone_heads(&self, store: &mut ParamStore, head: &Linear) {
        for e in &self.env_heads {
            store.copy_value(head.weight, e.weight);
            store.copy_value(head.bias, e.bias);
        }
    }

    pub fn env_head_params(&self) -> Vec<ParamId> {
        self.env_heads.iter().flat_map(|l| l.params()).collect()
    }
}

/// What is live (gradient-carrying) when building [`hei_objective`].
#[derive(Clone, Copy, Debug)]
pub struct Live {
    pub encoder: bool,
    pub head: bool,
    pub env_heads: bool,
    pub rho: bool,
    /// Encoder gradient through the environment-head branch.
    pub env_branch: bool,
}

impl Live {
    pub const ALL: Live = Live {
        encoder: true,
        head: true,
        env_heads: true,
        rho: true,
        env_branch: true,
    };
}

pub struct HeiTerms {
    pub risk: Var,
    pub penalty: Var,
    pub total: Var,
    pub weights: Var,
    /// Soft risks of the shared head per environment.
    pub shared_risks: Vec<Var>,
}

/// Builds `R(ω, Φ) + λ · Σ_k [R_k(ω, Φ) − R_k(ω_k, Φ)]` on `tape`, with the
/// weights `ρ(z)` and everything else live or frozen per `live`.
#[allow(clippy::too_many_arguments)]
pub fn hei_objective(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Model,
    parts: &HeiParts,
    batch: &Batch,
    labels: Rc<[usize]>,
    z: &Tensor,
    lambda: f64,
    live: Live,
) -> Result<HeiTerms> {
    let h_live = model.encoder.encode(tape, store, batch)?;
    let h_const = if live.encoder && live.env_branch {
        None
    } else {
        Some(tape.constant(tape.value(h_live).clone()))
    };
    let hs = if live.encoder { h_live } else { h_const.unwrap() };
    let he = h_const.unwrap_or(h_live);

    let shared = if live.head {
        model.head.forward(tape, store, hs)?
    } else {
        model.head.forward_frozen(tape, store, hs)?
    };
    let zv = tape.constant(z.clone());
    let w_live = parts.rho.forward(tape, store, zv)?;
    let weights = if live.rho {
        w_live
    } else {
        tape.constant(tape.value(w_live).clone())
    };
    let env_logits = parts
        .env_heads
        .iter()
        .map(|e| {
            if live.env_heads {
                e.forward(tape, store, he)
            } else {
                e.forward_frozen(tape, store, he)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let risk = erm_risk(tape, shared, labels.clone())?;
    let shared_risks = soft_env_risks(tape, shared, labels.clone(), weights)?;
    let penalty = invariance_penalty(tape, shared, &env_logits, labels, weights)?;
    let total = if lambda == 0.0 {
        risk
    } else {
        let p = tape.scale(penalty, lambda);
        tape.add(risk, p)?
    };
    Ok(HeiTerms {
        risk,
        penalty,
        total,
        weights,
        shared_risks,
    })
}

/// Standardized (optionally) pattern matrix of the train nodes.
pub fn train_patterns(cfg: &TrainConfig, patterns: &[NeighborPattern], train_idx: &[usize]) -> Result<Tensor> {
    let mut chosen = Vec::with_capacity(cfg.z_metrics.len());
    for m in &cfg.z_metrics {
        let p = patterns
            .iter()
            .find(|p| p.config.metric == *m)
            .ok_or_else(|| Error::Config(format!("no {m} patterns supplied")))?;
        chosen.push(p.clone());
    }
    let z = pattern_matrix(&chosen, train_idx);
    if !z.is_finite() {
        return Err(Error::NonFinite("neighbor patterns".into()));
    }
    Ok(if cfg.standardize_z { standardize_cols(&z) } else { z })
}

/// Training state of an HEI run, exposed step by step.
pub struct HeiRun {
    run: Run,
    cfg: TrainConfig,
    pub parts: HeiParts,
    z: Tensor,
    env_opt: Adam,
    rho_opt: Adam,
    epoch: usize,
}

impl HeiRun {
    pub fn new(
        cfg: &TrainConfig,
        spec: &EncoderSpec,
        g: &Graph,
        setting: &EvalSetting,
        patterns: &[NeighborPattern],
    ) -> Result<Self> {
        if cfg.trainer != TrainerKind::Hei {
            return Err(Error::Config(format!("HEI run configured with trainer {}", cfg.trainer)));
        }
        let mut run = Run::new(cfg, spec, g, setting)?;
        let z = train_patterns(cfg, patterns, &setting.train_idx)?;
        let mut rng = stream(cfg.seed, RHO_STREAM);
        let parts = HeiParts::new(&mut run.store, &run.model, z.cols(), cfg.rho_hidden, cfg.k, &mut rng);
        let env_opt = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay), parts.env_head_params(), &run.store);
        let rho_opt = Adam::new(AdamConfig::new(cfg.lr_rho, 0.0), parts.rho.params(), &run.store);
        Ok(HeiRun {
            run,
            cfg: cfg.clone(),
            parts,
            z,
            env_opt,
            rho_opt,
            epoch: 0,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.run.store
    }

    pub fn model(&self) -> &Model {
        &self.run.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.run.history
    }

    pub fn assignment(&self) -> Result<EnvAssignment> {
        env_weights(&self.parts.rho, &self.run.store, &self.z)
    }

    /// Penalty at the current parameters.
    pub fn penalty(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let t = self.terms(&mut tape, Live::ALL)?;
        Ok(tape.value(t.penalty).item())
    }

    fn terms(&self, tape: &mut Tape, live: Live) -> Result<HeiTerms> {
        hei_objective(
            tape,
            &self.run.store,
            &self.run.model,
            &self.parts,
            &self.run.train,
            self.run.labels.clone(),
            &self.z,
            self.cfg.lambda,
            live,
        )
    }

    /// `steps` descent steps on each `R_k(ω_k, Φ)` with `Φ` and `ρ` frozen.
    /// Representations and weights are computed once and reused.
    pub fn inner_steps(&mut self, steps: usize) -> Result<()> {
        let mut tape = Tape::new();
        let h = self.run.model.encoder.encode(&mut tape, &self.run.store, &self.run.train)?;
        let h = tape.value(h).clone();
        let w = env_weights(&self.parts.rho, &self.run.store, &self.z)?.weights;
        for _ in 0..steps {
            self.run.store.zero_grads();
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let wv = tape.constant(w.clone());
            let mut risks = Vec::with_capacity(self.cfg.k);
            for (j, e) in self.parts.env_heads.iter().enumerate() {
                let logits = e.forward(&mut tape, &self.run.store, hv)?;
                risks.push(soft_env_risk(&mut tape, logits, self.run.labels.clone(), wv, j)?);
            }
            let total = tape.add_all(&risks)?;
            tape.backward(total, &mut self.run.store)?;
            self.env_opt.step(&mut self.run.store)?;
        }
        Ok(())
    }

    /// Ascent on the penalty with respect to `ρ` only. Returns the penalty
    /// before the step.
    pub fn ascent_step(&mut self) -> Result<f64> {
        self.run.store.zero_grads();
        let mut tape = Tape::new();
        let live = Live {
            encoder: false,
            head: false,
            env_heads: false,
            rho: true,
            env_branch: false,
        };
        let t = self.terms(&mut tape, live)?;
        let neg = tape.scale(t.penalty, -1.0);
        tape.backward(neg, &mut self.run.store)?;
        self.rho_opt.step(&mut self.run.store)?;
        Ok(tape.value(t.penalty).item())
    }

    /// Descent on `R + λ · penalty` over `(Φ, ω)`. Returns
    /// `(objective, risk, shared env risks)`.
    pub fn outer_step(&mut self) -> Result<(f64, f64, Vec<f64>)> {
        self.run.store.zero_grads();
        let mut tape = Tape::new();
        let live = Live {
            encoder: true,
            head: true,
            env_heads: false,
            rho: false,
            env_branch: !self.cfg.stop_grad_env_branch,
        };
        let t = self.terms(&mut tape, live)?;
        tape.backward(t.total, &mut self.run.store)?;
        self.run.opt.step(&mut self.run.store)?;
        let risks = t.shared_risks.iter().map(|&r| tape.value(r).item()).collect();
        Ok((tape.value(t.total).item(), tape.value(t.risk).item(), risks))
    }

    /// Runs one epoch (warm-up or environment phase) and logs it.
    pub fn step_epoch(&mut self) -> Result<()> {
        let epoch = self.epoch;
        let rec = if epoch < self.cfg.warmup_epochs {
            let train_loss = self.run.erm_step()?;
            EpochRecord {
                epoch,
                train_loss,
                ..Default::default()
            }
        } else {
            if epoch == self.cfg.warmup_epochs {
                self.parts.clone_heads(&mut self.run.store, &self.run.model.head);
                self.env_opt.reset();
            }
            let assignment = self.assignment()?;
            let err = assignment.max_stochastic_error();
            if err > 1e-12 {
                return Err(Error::NonFinite(format!("environment weights off the simplex by {err}")));
            }
            self.inner_steps(self.cfg.m_inner)?;
            let mut penalty = 0.0;
            for i in 0..self.cfg.rho_steps {
                let p = self.ascent_step()?;
                if i == 0 {
                    penalty = p;
                }
            }
            let after = self.penalty()?;
            let (train_loss, _, risks) = self.outer_step()?;
            EpochRecord {
                epoch,
                train_loss,
                penalty: Some(penalty),
                penalty_after_ascent: Some(after),
                env_sizes: assignment.sizes(),
                risks,
                ..Default::default()
            }
        };
        if rec.penalty.is_some_and(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("penalty at epoch {epoch}")));
        }
        self.run.end_epoch(rec)?;
        self.epoch += 1;
        Ok(())
    }

    pub fn finish(self, g: &Graph, setting: &EvalSetting) -> Result<TrainOutcome> {
        let assignment = env_weights(&self.parts.rho, &self.run.store, &self.z)?;
        self.run.finish(TrainerKind::Hei, g, setting, Some(assignment))
    }
}

pub fn train_hei(
    cfg: &TrainConfig,
    spec: &EncoderSpec,
    g: &Graph,
    setting: &EvalSetting,
    patterns: &[NeighborPattern],
) -> Result<TrainOutcome> {
    let mut run = HeiRun::new(cfg, spec, g, setting, patterns)?;
    for _ in 0..cfg.epochs {
        run.step_epoch()?;
    }
    run.finish(g, setting)
}

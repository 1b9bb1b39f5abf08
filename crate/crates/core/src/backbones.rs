//! Encoder/classifier pairs: an encoder maps nodes to `B x H`
//! representations and a linear head maps those to class logits.
//!
//! Parameters live in a [`ParamStore`]; graph-derived inputs live in a
//! separate [`GraphInput`], so one set of weights can be evaluated on several
//! graphs over the same nodes (edge-dropped copies, for instance).

use std::rc::Rc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{uniform_init, Linear, Mlp, ParamId, ParamStore, SparseRows, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    LinkxLite,
    SgcLite,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linkx_lite" | "linkx" => Ok(EncoderKind::LinkxLite),
            "sgc_lite" | "sgc" => Ok(EncoderKind::SgcLite),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Propagation hops for SGC-lite.
    pub sgc_hops: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::LinkxLite,
            hidden_dim: 64,
            num_layers: 2,
            sgc_hops: 2,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::Config(format!(
                "hidden_dim and num_layers must be at least 1, got {} and {}",
                self.hidden_dim, self.num_layers
            )));
        }
        Ok(())
    }
}

/// Inputs an encoder needs from one graph.
#[derive(Clone, Debug)]
pub struct GraphInput {
    kind: EncoderKind,
    /// Raw features for LINKX, `Âᵖ X` for SGC.
    features: Tensor,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

/// A fixed node batch cut out of a [`GraphInput`], reusable across epochs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub idx: Vec<usize>,
    x: Tensor,
    adj: Option<Rc<SparseRows>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }
}

/// One hop of `(D + I)⁻¹ (A + I)` applied to `x`.
pub fn propagate_once(g: &Graph, x: &Tensor) -> Tensor {
    let d = x.cols();
    let rows: Vec<Vec<f64>> = (0..g.num_nodes())
        .into_par_iter()
        .map(|v| {
            let mut acc = x.row(v).to_vec();
            for &u in g.neighbors(v) {
                for (a, b) in acc.iter_mut().zip(x.row(u)) {
                    *a += b;
                }
            }
            let s = 1.0 / (g.degree(v) + 1) as f64;
            acc.iter_mut().for_each(|a| *a *= s);
            acc
        })
        .collect();
    let mut out = Tensor::zeros(g.num_nodes(), d);
    for (v, r) in rows.into_iter().enumerate() {
        out.row_mut(v).copy_from_slice(&r);
    }
    out
}

impl GraphInput {
    pub fn prepare(spec: &EncoderSpec, g: &Graph) -> Self {
        let features = match spec.kind {
            EncoderKind::LinkxLite => g.features().clone(),
            EncoderKind::SgcLite => {
                let mut x = g.features().clone();
                for _ in 0..spec.sgc_hops {
                    x = propagate_once(g, &x);
                }
                x
            }
        };
        GraphInput {
            kind: spec.kind,
            features,
            offsets: g.offsets().to_vec(),
            targets: g.targets().to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let n = self.num_nodes();
        if let Some(&bad) = idx.iter().find(|&&v| v >= n) {
            return Err(Error::NodeOutOfRange { id: bad, num_nodes: n });
        }
        let adj = match self.kind {
            EncoderKind::LinkxLite => {
                let mut offsets = Vec::with_capacity(idx.len() + 1);
                let mut indices = Vec::new();
                offsets.push(0);
                for &v in idx {
                    indices.extend_from_slice(&self.targets[self.offsets[v]..self.offsets[v + 1]]);
                    offsets.push(indices.len());
                }
                Some(Rc::new(SparseRows {
                    offsets,
                    indices,
                    num_cols: n,
                }))
            }
            EncoderKind::SgcLite => None,
        };
        Ok(Batch {
            idx: idx.to_vec(),
            x: self.features.select_rows(idx),
            adj,
        })
    }
}

/// `f_Φ`.
#[derive(Clone, Debug)]
pub enum Encoder {
    Linkx {
        /// `N x H` first layer of the adjacency branch.
        adj_weight: ParamId,
        adj_bias: ParamId,
        feat: Linear,
        mix: Linear,
        tail: Vec<Linear>,
    },
    Sgc {
        mlp: Mlp,
    },
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        spec: &EncoderSpec,
        store: &mut ParamStore,
        num_nodes: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden_dim;
        Ok(match spec.kind {
            EncoderKind::LinkxLite => {
                let adj_weight = store.add("enc.adj.weight", uniform_init(num_nodes, h, num_nodes, rng));
                let adj_bias = store.add("enc.adj.bias", uniform_init(1, h, num_nodes, rng));
                let feat = Linear::new(store, "enc.feat", feature_dim, h, rng);
                let mix = Linear::new(store, "enc.mix", 2 * h, h, rng);
                let tail = (1..spec.num_layers)
                    .map(|i| Linear::new(store, &format!("enc.tail.{i}"), h, h, rng))
                    .collect();
                Encoder::Linkx {
                    adj_weight,
                    adj_bias,
                    feat,
                    mix,
                    tail,
                }
            }
            EncoderKind::SgcLite => {
                let mut dims = vec![feature_dim];
                dims.extend(std::iter::repeat_n(h, spec.num_layers));
                Encoder::Sgc {
                    mlp: Mlp::new(store, "enc.mlp", &dims, true, rng),
                }
            }
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Encoder::Linkx {
                adj_weight,
                adj_bias,
                feat,
                mix,
                tail,
            } => {
                let mut out = vec![*adj_weight, *adj_bias];
                out.extend(feat.params());
                out.extend(mix.params());
                out.extend(tail.iter().flat_map(|l| l.params()));
                out
            }
            Encoder::Sgc { mlp } => mlp.params(),
        }
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        match self {
            Encoder::Linkx {
                adj_weight,
                adj_bias,
                feat,
                mix,
                tail,
            } => {
                let adj = batch
                    .adj
                    .clone()
                    .ok_or_else(|| Error::Config("LINKX encoder given an SGC batch".into()))?;
                let wa = tape.param(store, *adj_weight);
                let ba = tape.param(store, *adj_bias);
                let ha = tape.sparse_matmul(adj, wa)?;
                let ha = tape.add_bias(ha, ba)?;
                let x = tape.constant(batch.x.clone());
                let hx = feat.forward(tape, store, x)?;
                let cat = tape.concat_cols(ha, hx)?;
                let mixed = mix.forward(tape, store, cat)?;
                let s = tape.add_all(&[mixed, ha, hx])?;
                let mut h = tape.relu(s);
                for layer in tail {
                    h = layer.forward(tape, store, h)?;
                    h = tape.relu(h);
                }
                Ok(h)
            }
            Encoder::Sgc { mlp } => {
                if batch.adj.is_some() {
                    return Err(Error::Config("SGC encoder given a LINKX batch".into()));
                }
                let x = tape.constant(batch.x.clone());
                mlp.forward(tape, store, x)
            }
        }
    }
}

/// `f_ω`: the linear head `H -> C`.
pub fn classify(head: &Linear, tape: &mut Tape, store: &ParamStore, reps: Var) -> Result<Var> {
    let (_, h) = tape.value(reps).shape();
    if h != head.in_dim {
        return Err(Error::Shape(format!(
            "head expects {} inputs, representations have {h}",
            head.in_dim
        )));
    }
    head.forward(tape, store, reps)
}

/// Encoder plus head, with the parameter groups kept apart for the trainers.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Linear,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        spec: &EncoderSpec,
        store: &mut ParamStore,
        num_nodes: usize,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Encoder::new(spec, store, num_nodes, feature_dim, rng)?;
        let head = Linear::new(store, "head", spec.hidden_dim, num_classes, rng);
        Ok(Model { encoder, head })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let h = self.encoder.encode(tape, store, batch)?;
        classify(&self.head, tape, store, h)
    }

    /// Logits as a plain tensor, no gradients kept.
    pub fn predict(&self, store: &ParamStore, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.logits(&mut tape, store, batch)?;
        Ok(tape.value(out).clone())
    }
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len() as f64
}

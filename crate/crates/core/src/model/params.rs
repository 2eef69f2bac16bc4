//! Learnable tensors and their tape bindings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, SlotIntegration};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters of one message-passing layer.
///
/// `weights[t]` stacks the per-head transforms of slot `t`: rows
/// `k * d_out..(k + 1) * d_out` hold head `k`'s `d_out x d_in` matrix. The
/// attention vectors are laid out like a slot state row: slot-major, then
/// head, then `d_out` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<Tensor>,
    pub attn_src: Tensor,
    pub attn_dst: Tensor,
    /// `d_e x heads`; column `k` is head `k`'s edge-type attention vector.
    pub attn_rel: Tensor,
    /// `d_e x d_e` transform applied to the shared edge-type embeddings.
    pub rel_transform: Tensor,
    /// Per-slot residual projections, present when the residual connection is
    /// enabled and the input and output widths differ.
    pub residual: Option<Vec<Tensor>>,
}

/// Slot-attention MLP: `s = tanh(W h + b)`, score `<z, s>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotAttnParams {
    /// `d_s x d_L`.
    pub w: Tensor,
    /// `1 x d_s`.
    pub b: Tensor,
    /// `d_s x 1`.
    pub z: Tensor,
}

/// Every learnable tensor of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per-type input projections `d_1 x d0_t`.
    pub init: Vec<Tensor>,
    pub layers: Vec<LayerParams>,
    /// `(|edge types| + 1) x d_e`, the last row being the self-loop type.
    pub edge_emb: Tensor,
    pub slot_attn: Option<SlotAttnParams>,
    /// `d_task x (|types| * d_L)` for last-fc integration.
    pub fc: Option<Tensor>,
    /// Bilinear link decoder matrix, when the DistMult decoder is used.
    pub decoder: Option<Tensor>,
}

impl ModelParams {
    /// Random initialisation for `cfg`. The decoder matrix is added separately
    /// by [`ModelParams::with_decoder`].
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let t = cfg.num_node_types;
        let init = cfg
            .feat_dims
            .iter()
            .map(|&d0| Tensor::glorot(cfg.hidden_dim, d0, rng))
            .collect();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let shape = cfg.layer_shape(l);
            let out_w = shape.heads * shape.head_dim;
            let weights = (0..t)
                .map(|_| Tensor::glorot(out_w, shape.in_width, rng))
                .collect();
            let attn_std = (2.0 / (shape.head_dim + 1) as f64).sqrt();
            let residual = (cfg.residual && shape.in_width != out_w).then(|| {
                (0..t)
                    .map(|_| Tensor::glorot(out_w, shape.in_width, rng))
                    .collect()
            });
            layers.push(LayerParams {
                weights,
                attn_src: Tensor::randn(1, t * out_w, attn_std, rng),
                attn_dst: Tensor::randn(1, t * out_w, attn_std, rng),
                attn_rel: Tensor::glorot(cfg.edge_dim, shape.heads, rng),
                rel_transform: Tensor::glorot(cfg.edge_dim, cfg.edge_dim, rng),
                residual,
            });
        }
        let slot_width = cfg.slot_width(cfg.layers);
        let slot_attn = (cfg.integration == SlotIntegration::Attention).then(|| SlotAttnParams {
            w: Tensor::glorot(cfg.att_dim, slot_width, rng),
            b: Tensor::zeros(1, cfg.att_dim),
            z: Tensor::glorot(cfg.att_dim, 1, rng),
        });
        let fc = (cfg.integration == SlotIntegration::LastFc)
            .then(|| Tensor::glorot(cfg.task_dim, t * slot_width, rng));
        Ok(Self {
            init,
            layers,
            edge_emb: Tensor::randn(cfg.num_edge_types + 1, cfg.edge_dim, 1.0, rng),
            slot_attn,
            fc,
            decoder: None,
        })
    }

    /// Adds a `dim x dim` bilinear decoder matrix initialised near identity.
    pub fn with_decoder<R: Rng + ?Sized>(mut self, dim: usize, rng: &mut R) -> Self {
        let mut w = Tensor::randn(dim, dim, 0.1 / (dim as f64).sqrt(), rng);
        for i in 0..dim {
            w.set(i, i, w.get(i, i) + 1.0);
        }
        self.decoder = Some(w);
        self
    }

    /// All tensors with stable names, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (t, w) in self.init.iter().enumerate() {
            out.push((format!("init.{t}"), w));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (t, w) in layer.weights.iter().enumerate() {
                out.push((format!("layer{l}.weight.{t}"), w));
            }
            out.push((format!("layer{l}.attn_src"), &layer.attn_src));
            out.push((format!("layer{l}.attn_dst"), &layer.attn_dst));
            out.push((format!("layer{l}.attn_rel"), &layer.attn_rel));
            out.push((format!("layer{l}.rel_transform"), &layer.rel_transform));
            if let Some(res) = &layer.residual {
                for (t, w) in res.iter().enumerate() {
                    out.push((format!("layer{l}.residual.{t}"), w));
                }
            }
        }
        out.push(("edge_emb".into(), &self.edge_emb));
        if let Some(sa) = &self.slot_attn {
            out.push(("slot_attn.w".into(), &sa.w));
            out.push(("slot_attn.b".into(), &sa.b));
            out.push(("slot_attn.z".into(), &sa.z));
        }
        if let Some(fc) = &self.fc {
            out.push(("fc".into(), fc));
        }
        if let Some(d) = &self.decoder {
            out.push(("decoder".into(), d));
        }
        out
    }

    /// Mutable access in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.init.iter_mut());
        for layer in &mut self.layers {
            out.extend(layer.weights.iter_mut());
            out.push(&mut layer.attn_src);
            out.push(&mut layer.attn_dst);
            out.push(&mut layer.attn_rel);
            out.push(&mut layer.rel_transform);
            if let Some(res) = &mut layer.residual {
                out.extend(res.iter_mut());
            }
        }
        out.push(&mut self.edge_emb);
        if let Some(sa) = &mut self.slot_attn {
            out.push(&mut sa.w);
            out.push(&mut sa.b);
            out.push(&mut sa.z);
        }
        if let Some(fc) = &mut self.fc {
            out.push(fc);
        }
        if let Some(d) = &mut self.decoder {
            out.push(d);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut vars = Vec::new();
        let mut param = |t: &Tensor| {
            let v = tape.param(t.clone());
            vars.push(v);
            v
        };
        let init = self.init.iter().map(&mut param).collect();
        let layers = self
            .layers
            .iter()
            .map(|layer| BoundLayer {
                weights: layer.weights.iter().map(&mut param).collect(),
                attn_src: param(&layer.attn_src),
                attn_dst: param(&layer.attn_dst),
                attn_rel: param(&layer.attn_rel),
                rel_transform: param(&layer.rel_transform),
                residual: layer
                    .residual
                    .as_ref()
                    .map(|r| r.iter().map(&mut param).collect()),
            })
            .collect();
        let edge_emb = param(&self.edge_emb);
        let slot_attn = self.slot_attn.as_ref().map(|sa| BoundSlotAttn {
            w: param(&sa.w),
            b: param(&sa.b),
            z: param(&sa.z),
        });
        let fc = self.fc.as_ref().map(&mut param);
        let decoder = self.decoder.as_ref().map(&mut param);
        BoundParams {
            init,
            layers,
            edge_emb,
            slot_attn,
            fc,
            decoder,
            vars,
        }
    }

    /// Checks tensor shapes against `cfg`, naming the first offender.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let bad = |what: String, got: (usize, usize), want: (usize, usize)| {
            Err(Error::Shape(format!(
                "{what} is {got:?}, expected {want:?}"
            )))
        };
        if self.init.len() != cfg.num_node_types {
            return Err(Error::Shape(format!(
                "{} input projections for {} node types",
                self.init.len(),
                cfg.num_node_types
            )));
        }
        for (t, w) in self.init.iter().enumerate() {
            let want = (cfg.hidden_dim, cfg.feat_dims[t]);
            if w.shape() != want {
                return bad(format!("init.{t}"), w.shape(), want);
            }
        }
        if self.layers.len() != cfg.layers {
            return Err(Error::Shape(format!(
                "{} layers, config has {}",
                self.layers.len(),
                cfg.layers
            )));
        }
        let t = cfg.num_node_types;
        for (l, layer) in self.layers.iter().enumerate() {
            let s = cfg.layer_shape(l);
            let out_w = s.heads * s.head_dim;
            if layer.weights.len() != t {
                return Err(Error::Shape(format!(
                    "layer {l}: {} slot weights",
                    layer.weights.len()
                )));
            }
            for (ti, w) in layer.weights.iter().enumerate() {
                if w.shape() != (out_w, s.in_width) {
                    return bad(
                        format!("layer {l} weight {ti}"),
                        w.shape(),
                        (out_w, s.in_width),
                    );
                }
            }
            for (name, a) in [("attn_src", &layer.attn_src), ("attn_dst", &layer.attn_dst)] {
                if a.shape() != (1, t * out_w) {
                    return bad(format!("layer {l} {name}"), a.shape(), (1, t * out_w));
                }
            }
            if layer.attn_rel.shape() != (cfg.edge_dim, s.heads) {
                return bad(
                    format!("layer {l} attn_rel"),
                    layer.attn_rel.shape(),
                    (cfg.edge_dim, s.heads),
                );
            }
            if layer.rel_transform.shape() != (cfg.edge_dim, cfg.edge_dim) {
                return bad(
                    format!("layer {l} rel_transform"),
                    layer.rel_transform.shape(),
                    (cfg.edge_dim, cfg.edge_dim),
                );
            }
            let needs_proj = cfg.residual && s.in_width != out_w;
            if needs_proj != layer.residual.is_some() {
                return Err(Error::Shape(format!(
                    "layer {l}: residual projection {}",
                    if needs_proj { "missing" } else { "unexpected" }
                )));
            }
        }
        if self.edge_emb.shape() != (cfg.num_edge_types + 1, cfg.edge_dim) {
            return bad(
                "edge_emb".into(),
                self.edge_emb.shape(),
                (cfg.num_edge_types + 1, cfg.edge_dim),
            );
        }
        Ok(())
    }
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub init: Vec<Var>,
    pub layers: Vec<BoundLayer>,
    pub edge_emb: Var,
    pub slot_attn: Option<BoundSlotAttn>,
    pub fc: Option<Var>,
    pub decoder: Option<Var>,
    vars: Vec<Var>,
}

impl BoundParams {
    /// Handles in the order of [`ModelParams::named_tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub weights: Vec<Var>,
    pub attn_src: Var,
    pub attn_dst: Var,
    pub attn_rel: Var,
    pub rel_transform: Var,
    pub residual: Option<Vec<Var>>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundSlotAttn {
    pub w: Var,
    pub b: Var,
    pub z: Var,
}

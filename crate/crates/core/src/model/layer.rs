//! Slot initialisation and slot-based message passing.

use super::config::{LayerShape, ModelConfig, ATTN_RESIDUAL_DECAY};
use super::params::BoundLayer;
use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::HetGraph;

/// Forward-pass mode: dropout is active only when `training`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    pub seed: u64,
}

impl Mode {
    pub const EVAL: Mode = Mode {
        training: false,
        seed: 0,
    };

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
        }
    }

    /// Independent seed for one dropout site.
    pub(crate) fn site_seed(&self, layer: usize, site: u64) -> u64 {
        splitmix(self.seed ^ splitmix((layer as u64) << 8 | site))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Layer-0 slot state `n x (|types| * d_1)`: slot `phi(v)` of `v` is
/// `W0_phi(v) x_v`, every other slot is zero.
pub fn init_slots(tape: &mut Tape, g: &HetGraph, w0: &[Var]) -> Result<Var> {
    let types = g.num_node_types();
    if w0.len() != types {
        return Err(Error::Shape(format!(
            "{} input projections for {types} node types",
            w0.len()
        )));
    }
    let d1 = tape.shape(w0[0]).0;
    let n = g.num_nodes();
    let mut state: Option<Var> = None;
    for (t, &w) in w0.iter().enumerate() {
        let (rows, cols) = tape.shape(w);
        if rows != d1 {
            return Err(Error::Shape(format!(
                "input projection {t} maps to {rows}, type 0 maps to {d1}"
            )));
        }
        if g.type_count(t) == 0 {
            continue;
        }
        let x = g
            .features(t)
            .ok_or_else(|| Error::Input(format!("node type {t} has no features")))?;
        if x.cols() != cols {
            return Err(Error::Shape(format!(
                "type {t} features have width {}, projection expects {cols}",
                x.cols()
            )));
        }
        let x = tape.constant(x.clone());
        let h = tape.matmul_nt(x, w)?;
        let placed = tape.scatter_rows(h, g.members(t).clone(), n, types * d1, t * d1)?;
        state = Some(match state {
            None => placed,
            Some(s) => tape.add(s, placed)?,
        });
    }
    match state {
        Some(s) => Ok(s),
        None => Ok(tape.constant(crate::autodiff::Tensor::zeros(n, types * d1))),
    }
}

/// Applies each slot's own transform: slot `t` of every node is multiplied
/// by `weights[t]` (all heads stacked), with no bias.
pub fn slot_transform(tape: &mut Tape, state: Var, weights: &[Var]) -> Result<Var> {
    let types = weights.len();
    let (_, width) = tape.shape(state);
    if types == 0 || width % types != 0 {
        return Err(Error::Shape(format!(
            "state width {width} does not split into {types} slots"
        )));
    }
    let in_w = width / types;
    let mut parts = Vec::with_capacity(types);
    for (t, &w) in weights.iter().enumerate() {
        let wcols = tape.shape(w).1;
        if wcols != in_w {
            return Err(Error::Shape(format!(
                "slot {t} has width {in_w}, transform expects {wcols}"
            )));
        }
        let slot = tape.slice_cols(state, t * in_w, in_w)?;
        parts.push(tape.matmul_nt(slot, w)?);
    }
    tape.concat_cols(&parts)
}

/// Edge-level scores before normalisation, `E x heads` in CSR order.
pub fn raw_attention_scores(
    tape: &mut Tape,
    transformed: Var,
    layer: &BoundLayer,
    edge_emb: Option<Var>,
    g: &HetGraph,
    shape: LayerShape,
) -> Result<Var> {
    let dst_score = tape.head_scores(transformed, layer.attn_dst, shape.head_dim, shape.heads)?;
    let src_score = tape.head_scores(transformed, layer.attn_src, shape.head_dim, shape.heads)?;
    let per_dst = tape.gather_rows(dst_score, g.csr_dst().clone())?;
    let per_src = tape.gather_rows(src_score, g.csr_src().clone())?;
    let mut scores = tape.add(per_dst, per_src)?;
    if let Some(emb) = edge_emb {
        if tape.shape(emb).1 > 0 {
            let rel = tape.matmul_nt(emb, layer.rel_transform)?;
            let rel_score = tape.matmul(rel, layer.attn_rel)?;
            let per_edge = tape.gather_rows(rel_score, g.csr_etype().clone())?;
            scores = tape.add(scores, per_edge)?;
        }
    }
    Ok(scores)
}

/// Normalised attention `E x heads`: LeakyReLU then softmax over the
/// in-edges of each destination.
pub fn attention_scores(
    tape: &mut Tape,
    transformed: Var,
    layer: &BoundLayer,
    edge_emb: Option<Var>,
    g: &HetGraph,
    shape: LayerShape,
    negative_slope: f64,
) -> Result<Var> {
    let raw = raw_attention_scores(tape, transformed, layer, edge_emb, g, shape)?;
    let act = tape.activation(raw, Activation::LeakyRelu(negative_slope))?;
    tape.segment_softmax(act, g.csr_offsets().clone())
}

/// `relu(sum_u alpha_vu * h_u^t)` for every slot `t`, one weight per edge and
/// head shared by all slots.
pub fn aggregate_slots(
    tape: &mut Tape,
    transformed: Var,
    alpha: Var,
    g: &HetGraph,
    head_dim: usize,
) -> Result<Var> {
    let agg = aggregate_messages(tape, transformed, alpha, g, head_dim)?;
    tape.relu(agg)
}

fn aggregate_messages(
    tape: &mut Tape,
    transformed: Var,
    alpha: Var,
    g: &HetGraph,
    head_dim: usize,
) -> Result<Var> {
    tape.edge_aggregate(
        transformed,
        alpha,
        g.csr_src().clone(),
        g.csr_offsets().clone(),
        head_dim,
    )
}

/// Output of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub state: Var,
    /// Attention after softmax (and residual blending), before dropout.
    pub alpha: Var,
}

/// One slot-based message-passing layer (index `l`, 0-based).
#[allow(clippy::too_many_arguments)]
pub fn layer_forward(
    tape: &mut Tape,
    state: Var,
    layer: &BoundLayer,
    edge_emb: Option<Var>,
    g: &HetGraph,
    cfg: &ModelConfig,
    l: usize,
    prev_alpha: Option<Var>,
    mode: Mode,
) -> Result<LayerOutput> {
    let shape = cfg.layer_shape(l);
    let types = cfg.num_node_types;
    let (_, width) = tape.shape(state);
    if width != types * shape.in_width {
        return Err(Error::Shape(format!(
            "layer {l}: state width {width}, expected {} slots of {}",
            types, shape.in_width
        )));
    }
    let input = tape.dropout(state, cfg.dropout_feat, mode.site_seed(l, 1), mode.training)?;
    let transformed = slot_transform(tape, input, &layer.weights)?;
    let mut alpha = attention_scores(
        tape,
        transformed,
        layer,
        edge_emb,
        g,
        shape,
        cfg.negative_slope,
    )?;
    if cfg.attn_residual {
        if let Some(prev) = prev_alpha.filter(|&p| tape.shape(p) == tape.shape(alpha)) {
            let keep = tape.scale(alpha, 1.0 - ATTN_RESIDUAL_DECAY)?;
            let carried = tape.scale(prev, ATTN_RESIDUAL_DECAY)?;
            alpha = tape.add(keep, carried)?;
        }
    }
    let used = tape.dropout(alpha, cfg.dropout_attn, mode.site_seed(l, 2), mode.training)?;
    let mut out = aggregate_messages(tape, transformed, used, g, shape.head_dim)?;
    if cfg.residual {
        let out_w = shape.heads * shape.head_dim;
        let skip = match &layer.residual {
            None if shape.in_width == out_w => input,
            None => {
                return Err(Error::Shape(format!(
                    "layer {l}: residual needs a projection from {} to {out_w}",
                    shape.in_width
                )))
            }
            Some(proj) => slot_transform(tape, input, proj)?,
        };
        out = tape.add(out, skip)?;
    }
    let last = l + 1 == cfg.layers;
    if !last || cfg.final_activation {
        out = tape.relu(out)?;
    }
    Ok(LayerOutput { state: out, alpha })
}

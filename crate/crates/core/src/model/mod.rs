//! The slot attention model: slot initialisation, slot-based message passing
//! and slot integration.

mod config;
mod integrate;
mod layer;
mod params;

pub use config::{LayerShape, ModelConfig, SlotIntegration, ATTN_RESIDUAL_DECAY};
pub use integrate::{
    integrate_average, integrate_last_fc, integrate_slot_attention, integrate_target_slot,
};
pub use layer::{
    aggregate_slots, attention_scores, init_slots, layer_forward, raw_attention_scores,
    slot_transform, LayerOutput, Mode,
};
pub use params::{
    BoundLayer, BoundParams, BoundSlotAttn, LayerParams, ModelParams, SlotAttnParams,
};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::HetGraph;

/// Per-node slot vectors of one layer: an `n x (|types| * width)` matrix
/// whose row `v` is `[h_v^0 | h_v^1 | ...]`, each slot holding the heads
/// side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotState {
    values: Tensor,
    num_types: usize,
    heads: usize,
}

impl SlotState {
    pub fn new(values: Tensor, num_types: usize, heads: usize) -> Result<Self> {
        if num_types == 0 || heads == 0 || !values.cols().is_multiple_of(num_types * heads) {
            return Err(Error::Shape(format!(
                "width {} does not split into {num_types} slots of {heads} heads",
                values.cols()
            )));
        }
        Ok(Self {
            values,
            num_types,
            heads,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Width of one slot (all heads).
    pub fn slot_width(&self) -> usize {
        self.values.cols() / self.num_types
    }

    pub fn head_dim(&self) -> usize {
        self.slot_width() / self.heads
    }

    pub fn slot(&self, v: usize, t: usize) -> &[f64] {
        let w = self.slot_width();
        &self.values.row(v)[t * w..(t + 1) * w]
    }

    pub fn head(&self, v: usize, t: usize, k: usize) -> &[f64] {
        let d = self.head_dim();
        &self.slot(v, t)[k * d..(k + 1) * d]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// Tape handles produced by [`model_forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `states[0]` is the initial slot state, `states[l]` the output of layer `l`.
    pub states: Vec<Var>,
    /// Normalised attention per layer, `E x heads` in CSR edge order.
    pub attention: Vec<Var>,
    /// `1 x |types|` slot weights when slot attention is used.
    pub slot_weights: Option<Var>,
    /// Integrated node representations, `n x cfg.output_dim()`.
    pub output: Var,
}

/// Checks that `g` matches the data shape `cfg` was built for.
pub fn check_graph(g: &HetGraph, cfg: &ModelConfig) -> Result<()> {
    if g.num_node_types() != cfg.num_node_types {
        return Err(Error::Config(format!(
            "graph has {} node types, model expects {}",
            g.num_node_types(),
            cfg.num_node_types
        )));
    }
    if g.num_edge_types() != cfg.num_edge_types {
        return Err(Error::Config(format!(
            "graph has {} edge types, model expects {}",
            g.num_edge_types(),
            cfg.num_edge_types
        )));
    }
    for t in 0..cfg.num_node_types {
        if g.type_count(t) == 0 {
            continue;
        }
        match g.feature_dim(t) {
            Some(d) if d == cfg.feat_dims[t] => {}
            Some(d) => {
                return Err(Error::Config(format!(
                    "type {t} features have width {d}, model expects {}",
                    cfg.feat_dims[t]
                )))
            }
            None => return Err(Error::Input(format!("node type {t} has no features"))),
        }
    }
    Ok(())
}

/// Slot initialisation, `cfg.layers` message-passing layers and slot
/// integration.
pub fn model_forward(
    tape: &mut Tape,
    g: &HetGraph,
    params: &BoundParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Forward> {
    check_graph(g, cfg)?;
    if params.layers.len() != cfg.layers {
        return Err(Error::Shape(format!(
            "{} bound layers, config has {}",
            params.layers.len(),
            cfg.layers
        )));
    }
    let edge_emb = (cfg.edge_dim > 0).then_some(params.edge_emb);
    let mut state = init_slots(tape, g, &params.init)?;
    let mut states = vec![state];
    let mut attention = Vec::with_capacity(cfg.layers);
    let mut prev_alpha = None;
    for (l, layer) in params.layers.iter().enumerate() {
        let out = layer_forward(tape, state, layer, edge_emb, g, cfg, l, prev_alpha, mode)
            .map_err(|e| match e {
                Error::Shape(m) if !m.starts_with("layer") => {
                    Error::Shape(format!("layer {l}: {m}"))
                }
                other => other,
            })?;
        state = out.state;
        prev_alpha = Some(out.alpha);
        states.push(state);
        attention.push(out.alpha);
    }
    let types = cfg.num_node_types;
    let (mut output, slot_weights) = match cfg.integration {
        SlotIntegration::Attention => {
            let sa = params
                .slot_attn
                .as_ref()
                .ok_or_else(|| Error::Config("slot attention parameters missing".into()))?;
            let (h, beta) = integrate_slot_attention(tape, state, types, sa)?;
            (h, Some(beta))
        }
        SlotIntegration::Average => (integrate_average(tape, state, types)?, None),
        SlotIntegration::LastFc => {
            let fc = params
                .fc
                .ok_or_else(|| Error::Config("last-fc parameters missing".into()))?;
            (integrate_last_fc(tape, state, fc)?, None)
        }
        SlotIntegration::Target => (
            integrate_target_slot(tape, state, types, &cfg.target_types)?,
            None,
        ),
    };
    if cfg.hidden_embeddings {
        let mut parts = Vec::with_capacity(cfg.layers);
        for &s in &states[1..cfg.layers] {
            let h = integrate_average(tape, s, types)?;
            parts.push(tape.row_l2_normalize(h)?);
        }
        parts.push(tape.row_l2_normalize(output)?);
        output = tape.concat_cols(&parts)?;
    }
    Ok(Forward {
        states,
        attention,
        slot_weights,
        output,
    })
}

/// Plain values of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardValues {
    pub states: Vec<SlotState>,
    pub attention: Vec<Tensor>,
    pub slot_weights: Option<Tensor>,
    pub output: Tensor,
}

/// Runs [`model_forward`] on a scratch tape and copies the results out.
pub fn forward_values(
    g: &HetGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<ForwardValues> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fwd = model_forward(&mut tape, g, &bound, cfg, mode)?;
    let states = fwd
        .states
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            let heads = if l == 0 {
                1
            } else {
                cfg.layer_shape(l - 1).heads
            };
            SlotState::new(tape.value(s).clone(), cfg.num_node_types, heads)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardValues {
        states,
        attention: fwd
            .attention
            .iter()
            .map(|&a| tape.value(a).clone())
            .collect(),
        slot_weights: fwd.slot_weights.map(|b| tape.value(b).clone()),
        output: tape.value(fwd.output).clone(),
    })
}

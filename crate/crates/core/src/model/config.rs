use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention-residual blend factor between consecutive layers' attention.
pub const ATTN_RESIDUAL_DECAY: f64 = 0.05;

/// How the final slots of a node are collapsed into one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotIntegration {
    /// Global softmax weights over slots from a tanh MLP.
    Attention,
    /// Plain mean over all slots.
    Average,
    /// Bias-free linear map of the concatenated slots.
    LastFc,
    /// Mean over the target-type slots only.
    Target,
}

impl FromStr for SlotIntegration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Self::Attention),
            "average" => Ok(Self::Average),
            "last_fc" | "last-fc" => Ok(Self::LastFc),
            "target" => Ok(Self::Target),
            other => Err(Error::Config(format!("unknown slot integration {other:?}"))),
        }
    }
}

impl fmt::Display for SlotIntegration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Attention => "attention",
            Self::Average => "average",
            Self::LastFc => "last_fc",
            Self::Target => "target",
        })
    }
}

/// Architecture of a slot attention model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_node_types: usize,
    /// Input feature width per node type.
    pub feat_dims: Vec<usize>,
    /// Data edge types; the self-loop type is added on top.
    pub num_edge_types: usize,
    /// Slot width after initialisation and per-head width of hidden layers.
    pub hidden_dim: usize,
    pub layers: usize,
    /// Heads of the hidden layers.
    pub heads: usize,
    /// Per-head width of the last layer.
    pub out_dim: usize,
    /// Heads of the last layer.
    pub out_heads: usize,
    /// Edge-type embedding width; 0 drops the edge-type attention term.
    pub edge_dim: usize,
    /// Slot-attention MLP width.
    pub att_dim: usize,
    pub integration: SlotIntegration,
    /// Output width of last-fc integration.
    pub task_dim: usize,
    /// Slots averaged by target integration.
    pub target_types: Vec<usize>,
    pub negative_slope: f64,
    pub residual: bool,
    pub attn_residual: bool,
    /// Apply ReLU to the last layer as well.
    pub final_activation: bool,
    /// Concatenate L2-normalised per-layer embeddings (link prediction).
    pub hidden_embeddings: bool,
    pub dropout_feat: f64,
    pub dropout_attn: f64,
}

/// Widths of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    /// Width of each incoming slot.
    pub in_width: usize,
    pub heads: usize,
    /// Per-head output width.
    pub head_dim: usize,
}

impl ModelConfig {
    /// A config with the usual defaults for everything but the data shape.
    pub fn new(feat_dims: Vec<usize>, num_edge_types: usize, out_dim: usize) -> Self {
        Self {
            num_node_types: feat_dims.len(),
            feat_dims,
            num_edge_types,
            hidden_dim: 16,
            layers: 2,
            heads: 4,
            out_dim,
            out_heads: 1,
            edge_dim: 8,
            att_dim: 16,
            integration: SlotIntegration::Attention,
            task_dim: out_dim,
            target_types: vec![0],
            negative_slope: 0.2,
            residual: false,
            attn_residual: false,
            final_activation: false,
            hidden_embeddings: false,
            dropout_feat: 0.0,
            dropout_attn: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_node_types == 0 || self.feat_dims.len() != self.num_node_types {
            return fail(format!(
                "{} feature widths for {} node types",
                self.feat_dims.len(),
                self.num_node_types
            ));
        }
        if self.layers == 0 || self.heads == 0 || self.out_heads == 0 {
            return fail("layers and heads must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        if self.integration == SlotIntegration::Attention && self.att_dim == 0 {
            return fail("slot attention needs att_dim >= 1".into());
        }
        if self.integration == SlotIntegration::LastFc && self.task_dim == 0 {
            return fail("last-fc integration needs task_dim >= 1".into());
        }
        if self.integration == SlotIntegration::Target {
            if self.target_types.is_empty() {
                return fail("target integration needs at least one target type".into());
            }
            if let Some(t) = self
                .target_types
                .iter()
                .find(|&&t| t >= self.num_node_types)
            {
                return fail(format!(
                    "target type {t} outside 0..{}",
                    self.num_node_types
                ));
            }
        }
        for (name, rate) in [
            ("feature", self.dropout_feat),
            ("attention", self.dropout_attn),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} dropout {rate} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Shape of layer `l` (0-based).
    pub fn layer_shape(&self, l: usize) -> LayerShape {
        let last = l + 1 == self.layers;
        LayerShape {
            in_width: self.slot_width(l),
            heads: if last { self.out_heads } else { self.heads },
            head_dim: if last { self.out_dim } else { self.hidden_dim },
        }
    }

    /// Width of each slot entering layer `l`; `slot_width(layers)` is the
    /// width of the final slots.
    pub fn slot_width(&self, l: usize) -> usize {
        if l == 0 {
            self.hidden_dim
        } else if l == self.layers {
            self.out_heads * self.out_dim
        } else {
            self.heads * self.hidden_dim
        }
    }

    /// Width of the integrated per-node representation.
    pub fn output_dim(&self) -> usize {
        let last = match self.integration {
            SlotIntegration::LastFc => self.task_dim,
            _ => self.slot_width(self.layers),
        };
        if self.hidden_embeddings {
            (1..self.layers).map(|l| self.slot_width(l)).sum::<usize>() + last
        } else {
            last
        }
    }
}

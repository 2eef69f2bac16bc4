use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HetGraph;
use crate::model::{ModelConfig, SlotIntegration};
use crate::tasks::Decoder;

/// Input-feature regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum FeatType {
    /// Features as given.
    #[default]
    Given,
    /// Target types keep their features; every other node gets a width-1 zero.
    TargetOnly,
    /// One-hot identity features per type.
    OneHot,
}

impl From<FeatType> for u8 {
    fn from(f: FeatType) -> u8 {
        match f {
            FeatType::Given => 0,
            FeatType::TargetOnly => 1,
            FeatType::OneHot => 2,
        }
    }
}

impl TryFrom<u8> for FeatType {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Given),
            1 => Ok(Self::TargetOnly),
            2 => Ok(Self::OneHot),
            other => Err(Error::Config(format!(
                "feat type {other} not in {{0, 1, 2}}"
            ))),
        }
    }
}

impl FromStr for FeatType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .parse()
            .map_err(|_| Error::Config(format!("feat type {s:?} not in {{0, 1, 2}}")))?;
        Self::try_from(v)
    }
}

impl fmt::Display for FeatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Hyper-parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout_attn: f64,
    pub dropout_feat: f64,
    pub feat_type: FeatType,
    pub hidden_dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub heads: usize,
    pub att_dim: usize,
    pub edge_dim: usize,
    pub decoder: Decoder,
    pub slot_integration: SlotIntegration,
    pub patience: usize,
    pub seed: u64,
    pub residual: bool,
    pub attn_residual: bool,
    pub negative_slope: f64,
    pub final_activation: bool,
    /// Link prediction only: decode from concatenated per-layer embeddings.
    pub hidden_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-4,
            dropout_attn: 0.0,
            dropout_feat: 0.0,
            feat_type: FeatType::Given,
            hidden_dim: 16,
            layers: 2,
            epochs: 300,
            heads: 4,
            att_dim: 16,
            edge_dim: 8,
            decoder: Decoder::Dot,
            slot_integration: SlotIntegration::Attention,
            patience: 40,
            seed: 0,
            residual: false,
            attn_residual: false,
            negative_slope: 0.2,
            final_activation: false,
            hidden_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight decay must be non-negative");
        }
        if self.layers == 0 || self.heads == 0 {
            return fail("layers and heads must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.hidden_dim == 0 {
            return fail("hidden dim must be positive");
        }
        Ok(())
    }

    /// Model architecture for graph `g` with `out_dim` outputs per node.
    pub fn model_config(
        &self,
        g: &HetGraph,
        out_dim: usize,
        target_types: &[usize],
    ) -> Result<ModelConfig> {
        let feat_dims = (0..g.num_node_types())
            .map(|t| g.feature_dim(t).unwrap_or(0))
            .collect();
        let mut cfg = ModelConfig::new(feat_dims, g.num_edge_types(), out_dim);
        cfg.hidden_dim = self.hidden_dim;
        cfg.layers = self.layers;
        cfg.heads = self.heads;
        cfg.edge_dim = self.edge_dim;
        cfg.att_dim = self.att_dim;
        cfg.integration = self.slot_integration;
        cfg.task_dim = out_dim;
        cfg.target_types = target_types.to_vec();
        cfg.negative_slope = self.negative_slope;
        cfg.residual = self.residual;
        cfg.attn_residual = self.attn_residual;
        cfg.final_activation = self.final_activation;
        cfg.dropout_feat = self.dropout_feat;
        cfg.dropout_attn = self.dropout_attn;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feat_type_parsing() {
        assert_eq!("1".parse::<FeatType>().unwrap(), FeatType::TargetOnly);
        assert!("3".parse::<FeatType>().is_err());
        assert!("x".parse::<FeatType>().is_err());
        assert_eq!(serde_json::to_string(&FeatType::OneHot).unwrap(), "2");
    }

    #[test]
    fn invalid_configs() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig {
                lr: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                layers: 0,
                ..ok.clone()
            },
            TrainConfig {
                heads: 0,
                ..ok.clone()
            },
            TrainConfig {
                patience: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}

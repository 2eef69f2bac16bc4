use super::config::FeatType;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::HetGraph;

/// Rewrites node features according to `feat_type`.
pub fn apply_feat_type(
    g: &HetGraph,
    feat_type: FeatType,
    target_types: &[usize],
) -> Result<HetGraph> {
    let types = g.num_node_types();
    let missing = |t: usize| Error::Input(format!("node type {t} has no features"));
    let features = match feat_type {
        FeatType::Given => {
            if let Some(t) = (0..types).find(|&t| g.type_count(t) > 0 && g.features(t).is_none()) {
                return Err(missing(t));
            }
            return Ok(g.clone());
        }
        FeatType::TargetOnly => (0..types)
            .map(|t| {
                if target_types.contains(&t) {
                    match g.features(t) {
                        Some(f) => Ok(Some(f.clone())),
                        None if g.type_count(t) == 0 => Ok(None),
                        None => Err(missing(t)),
                    }
                } else {
                    Ok(Some(Tensor::zeros(g.type_count(t), 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?,
        FeatType::OneHot => (0..types)
            .map(|t| Some(Tensor::identity(g.type_count(t))))
            .collect(),
    };
    g.with_features(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn sample() -> HetGraph {
        let f0 = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let f1 = Tensor::from_rows(&[[5.0, 6.0, 7.0]]).unwrap();
        HetGraph::new(
            vec![0, 1, 0],
            2,
            vec![Some(f0), Some(f1)],
            vec![Edge::new(0, 1, 0), Edge::new(1, 2, 0)],
            1,
        )
        .unwrap()
    }

    #[test]
    fn given_is_unchanged() {
        let g = sample();
        assert_eq!(apply_feat_type(&g, FeatType::Given, &[0]).unwrap(), g);
    }

    #[test]
    fn target_only_zeroes_others() {
        let g = apply_feat_type(&sample(), FeatType::TargetOnly, &[0]).unwrap();
        assert_eq!(g.features(1).unwrap(), &Tensor::zeros(1, 1));
        assert_eq!(g.feature_row(2).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn one_hot_blocks_are_identities() {
        let g = apply_feat_type(&sample(), FeatType::OneHot, &[0]).unwrap();
        assert_eq!(g.features(0).unwrap(), &Tensor::identity(2));
        assert_eq!(g.features(1).unwrap(), &Tensor::identity(1));
    }

    #[test]
    fn given_requires_features() {
        let g = HetGraph::new(
            vec![0, 1],
            2,
            vec![Some(Tensor::zeros(1, 1)), None],
            vec![],
            1,
        )
        .unwrap();
        assert!(apply_feat_type(&g, FeatType::Given, &[0]).is_err());
        assert!(apply_feat_type(&g, FeatType::TargetOnly, &[0]).is_ok());
    }
}

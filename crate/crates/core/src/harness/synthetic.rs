//! Planted-partition heterogeneous graphs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Edge, HetGraph};
use crate::tasks::LabelSet;

/// One edge type joining two node types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub src_type: usize,
    pub dst_type: usize,
    /// Expected links as a fraction of all `src x dst` pairs.
    pub density: f64,
    /// Probability that a link joins two nodes of the same class.
    pub affinity: f64,
}

/// Recipe for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes_per_type: Vec<usize>,
    pub feat_dims: Vec<usize>,
    /// Distinct feature prototypes per type: class `c` of a type-`t` node
    /// uses prototype `c % resolution[t]`, so a resolution below `classes`
    /// leaves that type's features only partly informative.
    pub resolution: Vec<usize>,
    pub classes: usize,
    /// Standard deviation of the Gaussian around each prototype.
    pub noise: f64,
    /// Edge type `i` is `relations[i]`; every link is stored in both directions.
    pub relations: Vec<Relation>,
    pub target_type: usize,
    /// Share of labelled nodes held out as the test set.
    pub test_fraction: f64,
}

impl SyntheticSpec {
    /// Node-classification default: 500 labelled target nodes in 4 classes,
    /// two context types, class affinity 0.8 and feature noise 0.1. Target
    /// features only tell class pairs apart; the rest of the signal sits in
    /// the context types.
    pub fn node_classification() -> Self {
        let rel = |s, d, density| Relation {
            src_type: s,
            dst_type: d,
            density,
            affinity: 0.8,
        };
        Self {
            nodes_per_type: vec![500, 300, 300],
            feat_dims: vec![8, 8, 8],
            resolution: vec![2, 4, 4],
            classes: 4,
            noise: 0.1,
            relations: vec![rel(0, 1, 0.01), rel(0, 2, 0.01), rel(1, 2, 0.01)],
            target_type: 0,
            test_fraction: 0.2,
        }
    }

    /// Link-prediction default: a block-structured relation between types 0
    /// and 1 (edge type 0) plus class-agnostic links to a hub type that
    /// supply the two-hop negative candidates.
    pub fn link_prediction() -> Self {
        Self {
            nodes_per_type: vec![300, 300, 100],
            feat_dims: vec![8, 8, 8],
            resolution: vec![10, 10, 10],
            classes: 10,
            noise: 0.1,
            relations: vec![
                Relation {
                    src_type: 0,
                    dst_type: 1,
                    density: 0.02,
                    affinity: 1.0,
                },
                Relation {
                    src_type: 0,
                    dst_type: 2,
                    density: 0.03,
                    affinity: 0.1,
                },
                Relation {
                    src_type: 1,
                    dst_type: 2,
                    density: 0.03,
                    affinity: 0.1,
                },
            ],
            target_type: 0,
            test_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let types = self.nodes_per_type.len();
        let fail = |m: String| Err(Error::Config(m));
        if types < 2 {
            return fail("at least two node types".into());
        }
        if self.classes < 2 {
            return fail("at least two classes".into());
        }
        if self.feat_dims.len() != types || self.resolution.len() != types {
            return fail("feature widths and resolutions need one entry per type".into());
        }
        if self.resolution.contains(&0) || self.feat_dims.contains(&0) {
            return fail("feature widths and resolutions must be positive".into());
        }
        if self.target_type >= types {
            return fail(format!(
                "target type {} outside 0..{types}",
                self.target_type
            ));
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail("test fraction outside [0, 1)".into());
        }
        for r in &self.relations {
            if r.src_type >= types || r.dst_type >= types {
                return fail(format!("relation {r:?} references a missing type"));
            }
            if !(0.0..=1.0).contains(&r.density) {
                return fail(format!("density {} outside [0, 1]", r.density));
            }
            if !(0.0..=1.0).contains(&r.affinity) {
                return fail(format!("affinity {} outside [0, 1]", r.affinity));
            }
        }
        Ok(())
    }
}

/// A generated graph with its planted classes.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub graph: HetGraph,
    /// Planted class of every node, all types included.
    pub classes: Vec<usize>,
    /// Labels of the target nodes outside the test set.
    pub train_labels: LabelSet,
    /// Labels of the held-out test nodes.
    pub test_labels: LabelSet,
}

impl SyntheticData {
    /// Every target node's label.
    pub fn all_labels(&self) -> Result<LabelSet> {
        let mut entries: Vec<_> = self
            .train_labels
            .iter()
            .chain(self.test_labels.iter())
            .map(|(v, ls)| (v, ls.to_vec()))
            .collect();
        entries.sort_unstable();
        LabelSet::new(entries, self.train_labels.num_classes(), false)
    }

    pub fn test_nodes(&self) -> &[usize] {
        self.test_labels.nodes()
    }
}

/// Draws a graph from `spec`. Nodes are numbered type by type.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = spec.nodes_per_type.len();
    let mut node_type = Vec::new();
    let mut classes = Vec::new();
    let mut members = vec![Vec::new(); types];
    // by_class[t][c] lists the type-t nodes of class c.
    let mut by_class = vec![vec![Vec::new(); spec.classes]; types];
    for (t, &count) in spec.nodes_per_type.iter().enumerate() {
        // Balanced class sizes, assigned in random order.
        let mut cs: Vec<usize> = (0..count).map(|i| i % spec.classes).collect();
        cs.shuffle(&mut rng);
        for c in cs {
            let v = node_type.len();
            node_type.push(t);
            classes.push(c);
            members[t].push(v);
            by_class[t][c].push(v);
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(types);
    for t in 0..types {
        let d = spec.feat_dims[t];
        let protos: Vec<Vec<f64>> = (0..spec.resolution[t])
            .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let mut f = Tensor::zeros(members[t].len(), d);
        for (row, &v) in members[t].iter().enumerate() {
            let p = &protos[classes[v] % spec.resolution[t]];
            for (j, x) in f.row_mut(row).iter_mut().enumerate() {
                *x = p[j] + spec.noise * normal.sample(&mut rng);
            }
        }
        features.push(Some(f));
    }

    let mut edges = Vec::new();
    for (etype, r) in spec.relations.iter().enumerate() {
        let (src, dst) = (&members[r.src_type], &members[r.dst_type]);
        if src.is_empty() || dst.is_empty() {
            continue;
        }
        let same_type = r.src_type == r.dst_type;
        let pairs = if same_type {
            src.len() * (src.len() - 1) / 2
        } else {
            src.len() * dst.len()
        };
        let target = (r.density * pairs as f64).round() as usize;
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while seen.len() < target && attempts < 50 * target + 100 {
            attempts += 1;
            let v = src[rng.random_range(0..src.len())];
            let cv = classes[v];
            let intra = rng.random::<f64>() < r.affinity;
            let pool: Vec<&Vec<usize>> = (0..spec.classes)
                .filter(|&c| (c == cv) == intra)
                .map(|c| &by_class[r.dst_type][c])
                .filter(|l| !l.is_empty())
                .collect();
            let total: usize = pool.iter().map(|l| l.len()).sum();
            if total == 0 {
                continue;
            }
            let mut k = rng.random_range(0..total);
            let mut u = usize::MAX;
            for l in pool {
                if k < l.len() {
                    u = l[k];
                    break;
                }
                k -= l.len();
            }
            if u == v {
                continue;
            }
            let key = if same_type {
                (v.min(u), v.max(u))
            } else {
                (v, u)
            };
            if seen.insert(key) {
                edges.push(Edge::new(key.0, key.1, etype));
                edges.push(Edge::new(key.1, key.0, etype));
            }
        }
    }
    let graph = HetGraph::new(node_type, types, features, edges, spec.relations.len())?;

    let mut targets = members[spec.target_type].clone();
    targets.shuffle(&mut rng);
    let n_test = (targets.len() as f64 * spec.test_fraction).round() as usize;
    let (test, train) = targets.split_at(n_test);
    let entries = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|v| (v, vec![classes[v]]))
            .collect::<Vec<_>>()
    };
    Ok(SyntheticData {
        train_labels: LabelSet::new(entries(train), spec.classes, false)?,
        test_labels: LabelSet::new(entries(test), spec.classes, false)?,
        graph,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            nodes_per_type: vec![40, 30, 20],
            ..SyntheticSpec::node_classification()
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_synthetic(&small(), 9).unwrap();
        let b = generate_synthetic(&small(), 9).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.graph.all_features(), b.graph.all_features());
        assert_eq!(a.train_labels, b.train_labels);
        let c = generate_synthetic(&small(), 10).unwrap();
        assert_ne!(a.graph.edges(), c.graph.edges());
    }

    #[test]
    fn bad_density_is_rejected() {
        let mut spec = small();
        spec.relations[0].density = 1.5;
        assert!(generate_synthetic(&spec, 0).is_err());
        spec.relations[0].density = -0.1;
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn labels_cover_target_type() {
        let d = generate_synthetic(&small(), 1).unwrap();
        assert_eq!(d.train_labels.len() + d.test_labels.len(), 40);
        assert_eq!(d.test_labels.len(), 8);
        assert!(d
            .train_labels
            .nodes()
            .iter()
            .all(|&v| d.graph.node_type(v) == 0));
    }
}

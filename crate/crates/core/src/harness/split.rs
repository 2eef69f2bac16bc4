use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::sampling::negative_candidates;
use crate::graph::HetGraph;
use crate::tasks::{EdgeSamples, LabelSet};

/// Node ids of a classification split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled(mut items: Vec<usize>, seed: u64) -> Vec<usize> {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    items
}

fn round_share(n: usize, share: f64) -> usize {
    (n as f64 * share).round() as usize
}

/// 80/20 train/validation split of the labelled pool; `test` is left empty.
pub fn split_nc(labels: &LabelSet, seed: u64) -> Result<NodeSplit> {
    if labels.len() < 5 {
        return Err(Error::Input(format!(
            "{} labelled nodes, at least 5 needed for a split",
            labels.len()
        )));
    }
    let order = shuffled(labels.nodes().to_vec(), seed);
    let n_train = round_share(order.len(), 0.8);
    Ok(NodeSplit {
        train: order[..n_train].to_vec(),
        val: order[n_train..].to_vec(),
        test: Vec::new(),
    })
}

/// Moves a `fraction` of the labelled nodes into a held-out test set.
/// Returns `(pool, test)`.
pub fn hold_out(labels: &LabelSet, fraction: f64, seed: u64) -> Result<(LabelSet, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "test fraction {fraction} outside [0, 1)"
        )));
    }
    let order = shuffled(labels.nodes().to_vec(), seed);
    let n_test = round_share(order.len(), fraction);
    let mut test = order[..n_test].to_vec();
    let mut pool = order[n_test..].to_vec();
    test.sort_unstable();
    pool.sort_unstable();
    Ok((labels.restrict(&pool)?, test))
}

/// Link-prediction split: edge samples per part and the graph used for
/// message passing, which lacks the validation and test edges.
#[derive(Clone, Debug)]
pub struct LpSplit {
    pub target_edge_type: usize,
    pub graph: HetGraph,
    pub train: EdgeSamples,
    pub val: EdgeSamples,
    pub test: EdgeSamples,
    /// The negative pool was too small for 1:1 sampling.
    pub negatives_exhausted: bool,
}

/// Orientation-free key of a pair: ordered by `(type, id)`, so mirrored
/// edges of an undirected graph collapse to one link.
fn pair_key(g: &HetGraph, a: usize, b: usize) -> (usize, usize) {
    if (g.node_type(a), a) <= (g.node_type(b), b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// 81/9/10 split of the links of `target_edge_type` with one sampled
/// non-link per link in every part.
pub fn split_lp(g: &HetGraph, target_edge_type: usize, seed: u64) -> Result<LpSplit> {
    if target_edge_type >= g.num_edge_types() {
        return Err(Error::Input(format!(
            "edge type {target_edge_type} outside 0..{}",
            g.num_edge_types()
        )));
    }
    let mut links: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .filter(|e| e.etype == target_edge_type && e.src != e.dst)
        .map(|e| pair_key(g, e.src, e.dst))
        .collect();
    links.sort_unstable();
    links.dedup();
    if links.len() < 10 {
        return Err(Error::Input(format!(
            "{} links of type {target_edge_type}, at least 10 needed",
            links.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    links.shuffle(&mut rng);
    let n_test = round_share(links.len(), 0.10);
    let n_val = round_share(links.len(), 0.09);
    let test_pos = links[..n_test].to_vec();
    let val_pos = links[n_test..n_test + n_val].to_vec();
    let train_pos = links[n_test + n_val..].to_vec();

    let positive: HashSet<(usize, usize)> = links.iter().copied().collect();
    let mut negatives: Vec<(usize, usize)> = negative_candidates(g, target_edge_type)?
        .into_iter()
        .map(|(v, u)| pair_key(g, v, u))
        .filter(|k| !positive.contains(k))
        .collect();
    negatives.sort_unstable();
    negatives.dedup();
    negatives.shuffle(&mut rng);
    let wanted = links.len();
    let exhausted = negatives.len() < wanted;
    if exhausted {
        log::warn!(
            "negative pool has {} pairs for {wanted} links; parts receive fewer negatives",
            negatives.len()
        );
    }
    let mut rest = negatives.as_slice();
    let mut take = |k: usize| {
        let k = k.min(rest.len());
        let (head, tail) = rest.split_at(k);
        rest = tail;
        head.to_vec()
    };
    let test_neg = take(n_test);
    let val_neg = take(n_val);
    let train_neg = take(train_pos.len());

    let held: HashSet<(usize, usize)> = test_pos.iter().chain(&val_pos).copied().collect();
    let graph = g.filter_edges(|e| {
        e.etype != target_edge_type || !held.contains(&pair_key(g, e.src, e.dst))
    })?;
    let graph = if g.self_loops_added() {
        graph.add_self_loops()
    } else {
        graph
    };
    Ok(LpSplit {
        target_edge_type,
        graph,
        train: EdgeSamples::new(train_pos, train_neg)?,
        val: EdgeSamples::new(val_pos, val_neg)?,
        test: EdgeSamples::new(test_pos, test_neg)?,
        negatives_exhausted: exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::graph::Edge;

    fn labels(n: usize) -> LabelSet {
        LabelSet::new((0..n).map(|v| (v, vec![v % 2])).collect(), 2, false).unwrap()
    }

    #[test]
    fn nc_ratio_and_determinism() {
        let s = split_nc(&labels(10), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
        assert_eq!(s, split_nc(&labels(10), 3).unwrap());
        let other = split_nc(&labels(10), 4).unwrap();
        assert_eq!(other.train.len(), 8);
        assert_ne!(s.train, other.train);
        let mut all: Vec<_> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn nc_needs_five_labels() {
        assert!(split_nc(&labels(4), 0).is_err());
    }

    #[test]
    fn hold_out_is_disjoint() {
        let (pool, test) = hold_out(&labels(20), 0.1, 1).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(pool.len(), 18);
        assert!(test.iter().all(|v| pool.labels_of(*v).is_none()));
    }

    /// Bipartite graph between 20 type-0 and 20 type-1 nodes plus a
    /// type-2 hub layer supplying two-hop candidates.
    fn bipartite(links: usize) -> HetGraph {
        let mut types = vec![0; 20];
        types.extend(vec![1; 20]);
        types.extend(vec![2; 4]);
        let mut edges = Vec::new();
        let mut add = |a: usize, b: usize, t: usize| {
            edges.push(Edge::new(a, b, t));
            edges.push(Edge::new(b, a, t));
        };
        for i in 0..links {
            add(i % 20, 20 + (i * 7 + i / 20) % 20, 0);
        }
        for v in 0..40 {
            add(v, 40 + v % 4, 1);
        }
        let feats = (0..3).map(|_| None).collect::<Vec<Option<Tensor>>>();
        HetGraph::new(types, 3, feats, edges, 2).unwrap()
    }

    #[test]
    fn lp_ratio_and_removal() {
        let g = bipartite(100);
        let s = split_lp(&g, 0, 5).unwrap();
        assert_eq!(
            (
                s.train.positives.len(),
                s.val.positives.len(),
                s.test.positives.len()
            ),
            (81, 9, 10)
        );
        let kept: HashSet<(usize, usize)> = s
            .graph
            .edges()
            .iter()
            .filter(|e| e.etype == 0)
            .map(|e| (e.src, e.dst))
            .collect();
        for &(a, b) in s.val.positives.iter().chain(&s.test.positives) {
            assert!(!kept.contains(&(a, b)) && !kept.contains(&(b, a)));
        }
        for &(a, b) in &s.train.positives {
            assert!(kept.contains(&(a, b)));
        }
        assert_eq!(s.test.negatives.len(), 10);
        let again = split_lp(&g, 0, 5).unwrap();
        assert_eq!(again.test, s.test);
        assert_eq!(again.train, s.train);
    }

    #[test]
    fn lp_needs_ten_links() {
        assert!(split_lp(&bipartite(9), 0, 0).is_err());
    }
}

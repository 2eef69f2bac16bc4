use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HetGraph;
use crate::error::{Error, Result};

/// Result of [`sample_negative_edges`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub pairs: Vec<(usize, usize)>,
    /// Set when the candidate pool held fewer than the requested pairs; in
    /// that case `pairs` is the whole pool.
    pub exhausted: bool,
}

/// Samples `count` non-edges `(v, u)` for `target_edge_type`.
///
/// Candidates are 2-hop neighbours: `u` is reachable from `v` in two
/// undirected hops but is not adjacent to `v` through any edge type, and the
/// endpoint types match a pair the target type connects.
pub fn sample_negative_edges(
    g: &HetGraph,
    target_edge_type: usize,
    count: usize,
    seed: u64,
) -> Result<NegativeSample> {
    let mut pool = negative_candidates(g, target_edge_type)?;
    let exhausted = pool.len() < count;
    if exhausted {
        log::warn!(
            "negative pool for edge type {target_edge_type} has {} pairs, {count} requested",
            pool.len()
        );
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (chosen, _) = pool.partial_shuffle(&mut rng, count);
        pool = chosen.to_vec();
    }
    Ok(NegativeSample {
        pairs: pool,
        exhausted,
    })
}

/// Every admissible negative pair, in ascending `(v, u)` order.
pub(crate) fn negative_candidates(
    g: &HetGraph,
    target_edge_type: usize,
) -> Result<Vec<(usize, usize)>> {
    if target_edge_type >= g.num_edge_types() {
        return Err(Error::Input(format!(
            "edge type {target_edge_type} outside 0..{}",
            g.num_edge_types()
        )));
    }
    let mut positives = HashSet::new();
    let mut endpoint_types = BTreeSet::new();
    for e in g.edges().iter().filter(|e| e.etype == target_edge_type) {
        positives.insert((e.src, e.dst));
        endpoint_types.insert((g.node_type(e.src), g.node_type(e.dst)));
    }
    if endpoint_types.is_empty() {
        return Err(Error::Input(format!(
            "edge type {target_edge_type} has no edges"
        )));
    }
    let adj = g.undirected_adjacency();
    let mut pool = Vec::new();
    let mut seen = vec![false; g.num_nodes()];
    let mut reach = Vec::new();
    for v in 0..g.num_nodes() {
        let tv = g.node_type(v);
        if !endpoint_types.iter().any(|&(s, _)| s == tv) {
            continue;
        }
        reach.clear();
        seen[v] = true;
        for &a in &adj[v] {
            seen[a] = true;
        }
        for &a in &adj[v] {
            for &u in &adj[a] {
                if !seen[u] {
                    seen[u] = true;
                    reach.push(u);
                }
            }
        }
        seen[v] = false;
        for &a in &adj[v] {
            seen[a] = false;
        }
        reach.sort_unstable();
        for &u in &reach {
            seen[u] = false;
            if endpoint_types.contains(&(tv, g.node_type(u))) && !positives.contains(&(v, u)) {
                pool.push((v, u));
            }
        }
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    #[test]
    fn endpoint_types_follow_target_edges() {
        // a(t0) -[0]- b(t2) -[0]- d(t1) -[1]- c(t0). Target type 1 joins
        // types 0 and 1, so b is never a candidate endpoint for a or c.
        let edges = vec![
            Edge::new(0, 1, 0),
            Edge::new(1, 0, 0),
            Edge::new(1, 3, 0),
            Edge::new(3, 1, 0),
            Edge::new(2, 3, 1),
            Edge::new(3, 2, 1),
        ];
        let g = HetGraph::new(vec![0, 2, 0, 1], 3, vec![None; 3], edges, 2).unwrap();
        let pool = negative_candidates(&g, 1).unwrap();
        assert_eq!(pool, vec![(0, 3), (3, 0)]);
    }

    #[test]
    fn triangle_example() {
        // a - b (type 0), b - c (target type 1); all nodes share one type.
        let edges = vec![
            Edge::new(0, 1, 0),
            Edge::new(1, 0, 0),
            Edge::new(1, 2, 1),
            Edge::new(2, 1, 1),
        ];
        let g = HetGraph::new(vec![0; 3], 1, vec![None], edges, 2).unwrap();
        let pool = negative_candidates(&g, 1).unwrap();
        let from_a: Vec<_> = pool.iter().filter(|p| p.0 == 0).collect();
        assert_eq!(from_a, vec![&(0, 2)]);
    }

    #[test]
    fn complete_bipartite_is_empty() {
        let mut edges = Vec::new();
        for a in 0..3 {
            for b in 3..5 {
                edges.push(Edge::new(a, b, 0));
                edges.push(Edge::new(b, a, 0));
            }
        }
        let g = HetGraph::new(vec![0, 0, 0, 1, 1], 2, vec![None, None], edges, 1).unwrap();
        let s = sample_negative_edges(&g, 0, 4, 1).unwrap();
        assert!(s.pairs.is_empty());
        assert!(s.exhausted);
    }
}

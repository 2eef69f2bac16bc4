//! Heterogeneous graph model: typed nodes and edges, per-type features and a
//! destination-grouped adjacency.

mod io;
pub(crate) mod sampling;

use std::collections::VecDeque;
use std::sync::Arc;

pub use io::{load_graph, load_labels, write_graph};
pub use sampling::{sample_negative_edges, NegativeSample};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A directed, typed edge `src -> dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub etype: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize, etype: usize) -> Self {
        Self { src, dst, etype }
    }
}

/// A heterogeneous graph.
///
/// Node types are `0..num_node_types`, data edge types `0..num_edge_types`.
/// The id `num_edge_types` is reserved for self-loops inserted by
/// [`HetGraph::add_self_loops`]. The graph is immutable once built; the
/// adjacency is stored grouped by destination with each group sorted by
/// `(src, etype)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HetGraph {
    node_type: Vec<usize>,
    num_node_types: usize,
    num_edge_types: usize,
    /// Row of each node inside its type's feature matrix.
    type_row: Vec<usize>,
    /// Members of each type in ascending id order.
    members: Vec<Arc<[usize]>>,
    features: Vec<Option<Tensor>>,
    edges: Vec<Edge>,
    self_loops_added: bool,
    offsets: Arc<[usize]>,
    csr_src: Arc<[usize]>,
    csr_etype: Arc<[usize]>,
    csr_dst: Arc<[usize]>,
}

impl HetGraph {
    /// Builds a graph from its parts.
    ///
    /// `features[t]`, when present, holds one row per node of type `t` in
    /// ascending node-id order.
    pub fn new(
        node_type: Vec<usize>,
        num_node_types: usize,
        features: Vec<Option<Tensor>>,
        edges: Vec<Edge>,
        num_edge_types: usize,
    ) -> Result<Self> {
        let n = node_type.len();
        if let Some(&t) = node_type.iter().find(|&&t| t >= num_node_types) {
            return Err(Error::Graph(format!(
                "node type {t} outside 0..{num_node_types}"
            )));
        }
        if features.len() != num_node_types {
            return Err(Error::Graph(format!(
                "{} feature blocks for {num_node_types} node types",
                features.len()
            )));
        }
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Graph(format!(
                    "edge {}->{} references a node outside 0..{n}",
                    e.src, e.dst
                )));
            }
            if e.etype > num_edge_types {
                return Err(Error::Graph(format!(
                    "edge type {} outside 0..{num_edge_types}",
                    e.etype
                )));
            }
        }
        let mut members = vec![Vec::new(); num_node_types];
        let mut type_row = vec![0; n];
        for (v, &t) in node_type.iter().enumerate() {
            type_row[v] = members[t].len();
            members[t].push(v);
        }
        for (t, f) in features.iter().enumerate() {
            if let Some(f) = f {
                if f.rows() != members[t].len() {
                    return Err(Error::Graph(format!(
                        "type {t} has {} nodes but {} feature rows",
                        members[t].len(),
                        f.rows()
                    )));
                }
            }
        }
        let self_loops_added = edges.iter().any(|e| e.etype == num_edge_types);
        let mut g = Self {
            node_type,
            num_node_types,
            num_edge_types,
            type_row,
            members: members.into_iter().map(Arc::from).collect(),
            features,
            edges,
            self_loops_added,
            offsets: Arc::from([]),
            csr_src: Arc::from([]),
            csr_etype: Arc::from([]),
            csr_dst: Arc::from([]),
        };
        if self_loops_added {
            g.check_self_loops()?;
        }
        g.rebuild_csr();
        Ok(g)
    }

    fn check_self_loops(&self) -> Result<()> {
        let mut count = vec![0usize; self.num_nodes()];
        for e in &self.edges {
            if e.etype == self.num_edge_types {
                if e.src != e.dst {
                    return Err(Error::Graph(format!(
                        "edge {}->{} uses the reserved self-loop type",
                        e.src, e.dst
                    )));
                }
                count[e.src] += 1;
            }
        }
        if let Some(v) = count.iter().position(|&c| c != 1) {
            return Err(Error::Graph(format!(
                "node {v} has {} reserved self-loops, expected exactly one",
                count[v]
            )));
        }
        Ok(())
    }

    fn rebuild_csr(&mut self) {
        let n = self.num_nodes();
        let mut order: Vec<Edge> = self.edges.clone();
        order.sort_unstable_by_key(|e| (e.dst, e.src, e.etype));
        let mut offsets = vec![0usize; n + 1];
        for e in &order {
            offsets[e.dst + 1] += 1;
        }
        for v in 0..n {
            offsets[v + 1] += offsets[v];
        }
        self.offsets = offsets.into();
        self.csr_src = order.iter().map(|e| e.src).collect();
        self.csr_etype = order.iter().map(|e| e.etype).collect();
        self.csr_dst = order.iter().map(|e| e.dst).collect();
    }

    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }

    /// Number of data edge types, excluding the reserved self-loop type.
    pub fn num_edge_types(&self) -> usize {
        self.num_edge_types
    }

    pub fn self_loop_type(&self) -> usize {
        self.num_edge_types
    }

    pub fn self_loops_added(&self) -> bool {
        self.self_loops_added
    }

    pub fn node_type(&self, v: usize) -> usize {
        self.node_type[v]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    /// Nodes of type `t` in ascending order.
    pub fn members(&self, t: usize) -> &Arc<[usize]> {
        &self.members[t]
    }

    pub fn type_count(&self, t: usize) -> usize {
        self.members[t].len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self, t: usize) -> Option<&Tensor> {
        self.features.get(t).and_then(Option::as_ref)
    }

    pub fn all_features(&self) -> &[Option<Tensor>] {
        &self.features
    }

    /// Feature width of type `t`, if the type has features.
    pub fn feature_dim(&self, t: usize) -> Option<usize> {
        self.features(t).map(Tensor::cols)
    }

    /// Feature row of node `v`.
    pub fn feature_row(&self, v: usize) -> Option<&[f64]> {
        self.features(self.node_type[v])
            .map(|f| f.row(self.type_row[v]))
    }

    /// Replaces every type's features; shapes are validated as in [`HetGraph::new`].
    pub fn with_features(&self, features: Vec<Option<Tensor>>) -> Result<Self> {
        let mut g = Self::new(
            self.node_type.clone(),
            self.num_node_types,
            features,
            self.edges.clone(),
            self.num_edge_types,
        )?;
        g.self_loops_added = self.self_loops_added;
        Ok(g)
    }

    /// Keeps only the edges for which `keep` holds.
    pub(crate) fn filter_edges(&self, keep: impl Fn(&Edge) -> bool) -> Result<Self> {
        let edges = self.edges.iter().copied().filter(|e| keep(e)).collect();
        Self::new(
            self.node_type.clone(),
            self.num_node_types,
            self.features.clone(),
            edges,
            self.num_edge_types,
        )
    }

    /// Adds one reserved-type self-loop per node. A no-op on a graph that
    /// already has them.
    pub fn add_self_loops(&self) -> Self {
        if self.self_loops_added {
            return self.clone();
        }
        let mut g = self.clone();
        let loop_type = self.self_loop_type();
        g.edges
            .extend((0..self.num_nodes()).map(|v| Edge::new(v, v, loop_type)));
        g.self_loops_added = true;
        g.rebuild_csr();
        g
    }

    /// CSR offsets: the in-edges of `v` are positions `offsets[v]..offsets[v + 1]`.
    pub fn csr_offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    /// Source node of every edge in CSR order.
    pub fn csr_src(&self) -> &Arc<[usize]> {
        &self.csr_src
    }

    /// Edge type of every edge in CSR order.
    pub fn csr_etype(&self) -> &Arc<[usize]> {
        &self.csr_etype
    }

    /// Destination of every edge in CSR order.
    pub fn csr_dst(&self) -> &Arc<[usize]> {
        &self.csr_dst
    }

    /// In-neighbours of `v` with edge types, ordered by `(u, etype)`.
    pub fn neighbors(&self, v: usize) -> Result<Vec<(usize, usize)>> {
        if v >= self.num_nodes() {
            return Err(Error::Input(format!(
                "node {v} outside 0..{}",
                self.num_nodes()
            )));
        }
        let range = self.offsets[v]..self.offsets[v + 1];
        Ok(range
            .map(|i| (self.csr_src[i], self.csr_etype[i]))
            .collect())
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Undirected adjacency lists (deduplicated, ascending, self excluded).
    pub fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for e in &self.edges {
            if e.src != e.dst {
                adj[e.src].push(e.dst);
                adj[e.dst].push(e.src);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Connected components of the undirected closure. Component ids are
    /// assigned in order of each component's smallest node id.
    pub fn connected_components(&self) -> ComponentLabeling {
        let adj = self.undirected_adjacency();
        let n = self.num_nodes();
        let mut label = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            label[start] = id;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                size += 1;
                for &u in &adj[v] {
                    if label[u] == usize::MAX {
                        label[u] = id;
                        queue.push_back(u);
                    }
                }
            }
            sizes.push(size);
        }
        ComponentLabeling { label, sizes }
    }
}

/// Partition of the nodes into undirected connected components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub label: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, v: usize) -> usize {
        self.sizes[self.label[v]]
    }
}

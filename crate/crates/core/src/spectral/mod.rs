//! Dense spectral convolution `G = I - alpha * L_rw` and the per-component
//! limits of repeated convolution, used to check slot convergence
//! numerically.

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::HetGraph;

/// The convolution operator `G = I - alpha * D^-1 (D - A)` over the
/// symmetrised, unweighted adjacency `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    g: Tensor,
    alpha: f64,
    degrees: Vec<f64>,
}

impl DenseOperator {
    pub fn matrix(&self) -> &Tensor {
        &self.g
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_nodes(&self) -> usize {
        self.g.rows()
    }

    /// Degrees in the symmetrised adjacency, self-loops counted once.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `L_rw = (I - G) / alpha`.
    pub fn laplacian(&self) -> Tensor {
        let n = self.num_nodes();
        let mut l = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let eye = if i == j { 1.0 } else { 0.0 };
                l.set(i, j, (eye - self.g.get(i, j)) / self.alpha);
            }
        }
        l
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.g.matmul(x)
    }
}

/// Builds `G` for `g`. Every node needs a neighbour, which adding
/// self-loops guarantees.
pub fn row_normalized_laplacian(g: &HetGraph, alpha: f64) -> Result<DenseOperator> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("step size {alpha} outside (0, 1]")));
    }
    let n = g.num_nodes();
    let mut adj = vec![false; n * n];
    for e in g.edges() {
        adj[e.src * n + e.dst] = true;
        adj[e.dst * n + e.src] = true;
    }
    let mut degrees = vec![0.0; n];
    for (i, d) in degrees.iter_mut().enumerate() {
        *d = adj[i * n..(i + 1) * n].iter().filter(|&&a| a).count() as f64;
        if *d == 0.0 {
            return Err(Error::Graph(format!("node {i} has degree zero")));
        }
    }
    // G = (1 - alpha) I + alpha D^-1 A
    let mut m = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = if adj[i * n + j] {
                alpha / degrees[i]
            } else {
                0.0
            };
            if i == j {
                v += 1.0 - alpha;
            }
            m.set(i, j, v);
        }
    }
    Ok(DenseOperator {
        g: m,
        alpha,
        degrees,
    })
}

/// `n x d0_t` matrix holding `x_v` in row `v` when `v` has type `t` and
/// zeros elsewhere.
pub fn typed_feature_matrix(g: &HetGraph, t: usize) -> Result<Tensor> {
    if t >= g.num_node_types() {
        return Err(Error::Input(format!(
            "node type {t} outside 0..{}",
            g.num_node_types()
        )));
    }
    let width = match g.features(t) {
        Some(f) => f.cols(),
        None if g.type_count(t) == 0 => 0,
        None => return Err(Error::Input(format!("node type {t} has no features"))),
    };
    let mut x = Tensor::zeros(g.num_nodes(), width);
    for &v in g.members(t).iter() {
        let row = g.feature_row(v).expect("typed node has a feature row");
        x.row_mut(v).copy_from_slice(row);
    }
    Ok(x)
}

/// `G^steps X` by repeated multiplication.
pub fn iterate_convolution(op: &DenseOperator, x: &Tensor, steps: usize) -> Result<Tensor> {
    let mut cur = x.clone();
    for _ in 0..steps {
        cur = op.apply(&cur)?;
    }
    Ok(cur)
}

/// Per-component weighted mean of the type-`t` features, broadcast to
/// every node of the component: row `i` is
/// `sum_{j in cc(i), type t} w_j x_j / sum_{j in cc(i)} w_j`.
fn component_mean(g: &HetGraph, t: usize, weight: impl Fn(usize) -> f64) -> Result<Tensor> {
    let x = typed_feature_matrix(g, t)?;
    let cc = g.connected_components();
    let d = x.cols();
    let mut sums = Tensor::zeros(cc.num_components(), d);
    let mut mass = vec![0.0; cc.num_components()];
    for v in 0..g.num_nodes() {
        let c = cc.label[v];
        let w = weight(v);
        mass[c] += w;
        if g.node_type(v) == t {
            for (s, xv) in sums.row_mut(c).iter_mut().zip(x.row(v)) {
                *s += w * xv;
            }
        }
    }
    let mut out = Tensor::zeros(g.num_nodes(), d);
    for v in 0..g.num_nodes() {
        let c = cc.label[v];
        for (o, s) in out.row_mut(v).iter_mut().zip(sums.row(c)) {
            *o = s / mass[c];
        }
    }
    Ok(out)
}

/// The stated convergence limit: row `i` is the sum of the type-`t`
/// features in `cc(i)` divided by the full component size `|cc(i)|`.
pub fn theorem_limit(g: &HetGraph, t: usize) -> Result<Tensor> {
    component_mean(g, t, |_| 1.0)
}

/// The actual limit of `G^l X` for the non-symmetric `G`: the type-`t`
/// features averaged over each component with weights proportional to node
/// degree (the stationary distribution of `D^-1 A`). Coincides with
/// [`theorem_limit`] on components whose nodes all share one degree.
pub fn stationary_limit(g: &HetGraph, op: &DenseOperator, t: usize) -> Result<Tensor> {
    if op.num_nodes() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "operator over {} nodes for a graph of {}",
            op.num_nodes(),
            g.num_nodes()
        )));
    }
    let deg = op.degrees().to_vec();
    component_mean(g, t, |v| deg[v])
}

/// Outcome of [`verify_convergence`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `||G^l X - limit||_inf` at the last iterate.
    pub max_abs_diff: f64,
    pub steps_used: usize,
    /// `max_abs_diff < tol`.
    pub converged: bool,
    /// Whether the iteration itself settled (`||G^{l+1} X - G^l X||_inf < tol * 1e-3`)
    /// before `max_steps`.
    pub settled: bool,
}

/// Iterates `X <- G X` from `x` until successive iterates differ by less
/// than `tol * 1e-3` or `max_steps` is reached, and compares with `limit`.
pub fn verify_against(
    op: &DenseOperator,
    x: &Tensor,
    limit: &Tensor,
    tol: f64,
    max_steps: usize,
) -> Result<ConvergenceReport> {
    if x.shape() != limit.shape() {
        return Err(Error::Shape(format!(
            "iterate {:?} against limit {:?}",
            x.shape(),
            limit.shape()
        )));
    }
    let mut cur = x.clone();
    let mut steps = 0;
    let mut settled = false;
    while steps <= max_steps {
        let next = op.apply(&cur)?;
        if next.max_abs_diff(&cur) < tol * 1e-3 {
            settled = true;
            break;
        }
        if steps == max_steps {
            break;
        }
        cur = next;
        steps += 1;
    }
    let max_abs_diff = cur.max_abs_diff(limit);
    Ok(ConvergenceReport {
        max_abs_diff,
        steps_used: steps,
        converged: max_abs_diff < tol,
        settled,
    })
}

/// Checks that repeated convolution of the type-`t` features reaches
/// [`theorem_limit`]. Non-convergence is reported, not raised.
pub fn verify_convergence(
    g: &HetGraph,
    t: usize,
    alpha: f64,
    tol: f64,
    max_steps: usize,
) -> Result<ConvergenceReport> {
    let op = row_normalized_laplacian(g, alpha)?;
    let x = typed_feature_matrix(g, t)?;
    let limit = theorem_limit(g, t)?;
    verify_against(&op, &x, &limit, tol, max_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn graph(types: Vec<usize>, feats: Vec<Option<Tensor>>, edges: &[(usize, usize)]) -> HetGraph {
        let k = feats.len();
        let edges = edges.iter().map(|&(s, d)| Edge::new(s, d, 0)).collect();
        HetGraph::new(types, k, feats, edges, 1)
            .unwrap()
            .add_self_loops()
    }

    #[test]
    fn single_node_operator() {
        let g = graph(vec![0], vec![Some(Tensor::scalar(3.0))], &[]);
        let op = row_normalized_laplacian(&g, 0.8).unwrap();
        assert_eq!(op.laplacian().data(), &[0.0]);
        assert_eq!(op.matrix().data(), &[1.0]);
    }

    #[test]
    fn two_node_laplacian() {
        let f = Tensor::from_rows(&[[1.0], [5.0]]).unwrap();
        let g = graph(vec![0, 0], vec![Some(f)], &[(0, 1)]);
        let op = row_normalized_laplacian(&g, 0.5).unwrap();
        let l = op.laplacian();
        assert_eq!(l.data(), &[0.5, -0.5, -0.5, 0.5]);
        // One step by hand: G = [[0.75, 0.25], [0.25, 0.75]].
        let x = typed_feature_matrix(&g, 0).unwrap();
        let y = iterate_convolution(&op, &x, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
        assert_eq!(iterate_convolution(&op, &x, 0).unwrap(), x);
    }

    #[test]
    fn zero_degree_is_an_error() {
        let g = HetGraph::new(vec![0], 1, vec![Some(Tensor::scalar(1.0))], vec![], 1).unwrap();
        assert!(matches!(
            row_normalized_laplacian(&g, 0.5),
            Err(Error::Graph(_))
        ));
        let g = g.add_self_loops();
        assert!(row_normalized_laplacian(&g, 0.0).is_err());
        assert!(row_normalized_laplacian(&g, 1.5).is_err());
    }

    #[test]
    fn theorem_limit_divides_by_component_size() {
        let g = graph(
            vec![0, 1],
            vec![Some(Tensor::scalar(4.0)), Some(Tensor::scalar(9.0))],
            &[(0, 1)],
        );
        let lim = theorem_limit(&g, 0).unwrap();
        assert_eq!(lim.data(), &[2.0, 2.0]);
    }

    #[test]
    fn component_without_type_has_zero_limit() {
        let g = graph(
            vec![0, 1, 1],
            vec![
                Some(Tensor::scalar(4.0)),
                Some(Tensor::from_rows(&[[1.0], [2.0]]).unwrap()),
            ],
            &[(1, 2)],
        );
        let lim = theorem_limit(&g, 0).unwrap();
        assert_eq!(lim.data(), &[4.0, 0.0, 0.0]);
    }

    #[test]
    fn typed_matrix_zeroes_other_types() {
        let g = graph(
            vec![1, 0, 1],
            vec![
                Some(Tensor::from_rows(&[[7.0, 8.0]]).unwrap()),
                Some(Tensor::from_rows(&[[1.0], [2.0]]).unwrap()),
            ],
            &[],
        );
        let x0 = typed_feature_matrix(&g, 0).unwrap();
        assert_eq!(x0.data(), &[0.0, 0.0, 7.0, 8.0, 0.0, 0.0]);
        assert!(typed_feature_matrix(&g, 2).is_err());
    }

    #[test]
    fn two_node_example_converges() {
        let f = Tensor::from_rows(&[[1.0], [5.0]]).unwrap();
        let g = graph(vec![0, 0], vec![Some(f)], &[(0, 1)]);
        let r = verify_convergence(&g, 0, 0.5, 1e-8, 200).unwrap();
        assert!(r.max_abs_diff < 1e-10, "{r:?}");
        assert!(r.converged && r.settled);
    }

    #[test]
    fn limit_as_input_settles_immediately() {
        let f = Tensor::from_rows(&[[1.0], [5.0], [2.0]]).unwrap();
        let g = graph(vec![0, 0, 0], vec![Some(f)], &[(0, 1), (1, 2)]);
        let op = row_normalized_laplacian(&g, 0.8).unwrap();
        let lim = theorem_limit(&g, 0).unwrap();
        let r = verify_against(&op, &lim, &lim, 1e-6, 100).unwrap();
        assert_eq!(r.steps_used, 0);
        assert!(r.converged);
    }

    #[test]
    fn path_converges_to_degree_weighted_mean() {
        // Degrees with self-loops: 2, 3, 2.
        let f = Tensor::from_rows(&[[1.0], [5.0], [2.0]]).unwrap();
        let g = graph(vec![0, 0, 0], vec![Some(f)], &[(0, 1), (1, 2)]);
        let op = row_normalized_laplacian(&g, 0.8).unwrap();
        let stat = stationary_limit(&g, &op, 0).unwrap();
        let want = (2.0 * 1.0 + 3.0 * 5.0 + 2.0 * 2.0) / 7.0;
        assert!((stat.get(0, 0) - want).abs() < 1e-15);
        let x = typed_feature_matrix(&g, 0).unwrap();
        let r = verify_against(&op, &x, &stat, 1e-9, 10_000).unwrap();
        assert!(r.converged, "{r:?}");
        let plain = verify_convergence(&g, 0, 0.8, 1e-6, 10_000).unwrap();
        assert!(!plain.converged);
        assert!((plain.max_abs_diff - (want - 8.0 / 3.0).abs()).abs() < 1e-6);
    }
}

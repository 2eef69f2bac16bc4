//! Operation tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to run its adjoint. Nodes are appended in evaluation order, so
//! the tape is already topologically sorted and [`Tape::backward`] is a single
//! reverse sweep that visits each node once.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Elementwise non-linearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Elu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Elu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative given the input `x` and output `y`; right-derivative at kinks.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Elu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + a
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `relu`, `leaky_relu` (slope 0.2), `leaky_relu:<slope>`, `tanh`,
    /// `sigmoid`, `elu`, `elu:<alpha>` and `none`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::Config(format!("bad activation parameter {a:?}")))
            })
        };
        Ok(match name {
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu(param(0.2)?),
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "elu" => Activation::Elu(param(1.0)?),
            "none" | "identity" => Activation::Identity,
            other => return Err(Error::Config(format!("unknown activation {other:?}"))),
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Act(usize, Activation),
    Log(usize),
    Clamp(usize, f64, f64),
    SegmentSoftmax(usize, Arc<[usize]>),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    GatherRows(usize, Arc<[usize]>),
    ScatterRows {
        x: usize,
        rows: Arc<[usize]>,
        col_offset: usize,
    },
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    MaskMul(usize, Tensor),
    EdgeAggregate {
        x: usize,
        alpha: usize,
        src: Arc<[usize]>,
        offsets: Arc<[usize]>,
        head_width: usize,
    },
    HeadScores {
        x: usize,
        a: usize,
        head_width: usize,
    },
    RowL2Normalize(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations on dense tensors and replays them backwards.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], keyed by tape node.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. `None` when `var` was not
    /// recorded with `requires_grad` or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index()).and_then(Option::take)
    }
}

macro_rules! check_shape {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(Error::Shape(format!($($fmt)*)));
        }
    };
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::Tape(format!("{v:?} is not recorded on this tape")));
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        if cfg!(feature = "nan-check") {
            assert!(value.all_finite(), "non-finite value recorded on tape");
        }
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Records a leaf. Gradients are kept only for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(value, Op::MatMul(ia, ib), &[ia, ib]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        check_shape!(
            av.cols() == bv.cols(),
            "matmul_nt {:?} by transpose of {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm_nt(av, bv, &mut out);
        Ok(self.push(out, Op::MatMulNt(ia, ib), &[ia, ib]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose();
        Ok(self.push(value, Op::Transpose(ia), &[ia]))
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        check_shape!(
            av.shape() == bv.shape(),
            "{name} {:?} and {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y));
        let value = Tensor::from_vec(av.rows(), av.cols(), data.collect())?;
        Ok(self.push(value, op(ia, ib), &[ia, ib]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds the `1 x c` row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (av, rv) = (&self.nodes[ia].value, &self.nodes[ir].value);
        check_shape!(
            rv.rows() == 1 && rv.cols() == av.cols(),
            "add_row {:?} and {:?}",
            av.shape(),
            rv.shape()
        );
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(ia, ir), &[ia, ir]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| x * factor);
        Ok(self.push(value, Op::Scale(ia, factor), &[ia]))
    }

    /// Multiplies every entry of `a` by the scalar held in the 1x1 `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.idx(a)?, self.idx(s)?);
        let factor = self.nodes[is].value.item()?;
        let value = self.nodes[ia].value.map(|x| x * factor);
        Ok(self.push(value, Op::ScaleBy(ia, is), &[ia, is]))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| kind.apply(x));
        Ok(self.push(value, Op::Act(ia, kind), &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f64::ln);
        Ok(self.push(value, Op::Log(ia), &[ia]))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| x.clamp(lo, hi));
        Ok(self.push(value, Op::Clamp(ia, lo, hi), &[ia]))
    }

    /// Softmax of each column of `scores` within the row segments
    /// `offsets[v]..offsets[v + 1]`. Every segment must be non-empty.
    pub fn segment_softmax(&mut self, scores: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let is = self.idx(scores)?;
        let x = &self.nodes[is].value;
        check_shape!(
            offsets.last() == Some(&x.rows()),
            "segment offsets end at {:?}, scores have {} rows",
            offsets.last(),
            x.rows()
        );
        let k = x.cols();
        let mut out = Tensor::zeros(x.rows(), k);
        for (v, w) in offsets.windows(2).enumerate() {
            let (lo, hi) = (w[0], w[1]);
            if lo >= hi {
                return Err(Error::EmptySegment { node: v });
            }
            for c in 0..k {
                let max = (lo..hi).fold(f64::NEG_INFINITY, |m, e| m.max(x.get(e, c)));
                let mut total = 0.0;
                for e in lo..hi {
                    let y = (x.get(e, c) - max).exp();
                    out.set(e, c, y);
                    total += y;
                }
                for e in lo..hi {
                    out.set(e, c, out.get(e, c) / total);
                }
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(is, offsets), &[is]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(ia), &[ia]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmaxRows(ia), &[ia]))
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let mut out = Tensor::zeros(index.len(), x.cols());
        for (i, &r) in index.iter().enumerate() {
            check_shape!(r < x.rows(), "gather row {r} of {} rows", x.rows());
            out.row_mut(i).copy_from_slice(x.row(r));
        }
        Ok(self.push(out, Op::GatherRows(ia, index), &[ia]))
    }

    /// Places row `i` of `a` at row `rows[i]`, columns starting at
    /// `col_offset`, of an otherwise zero `out_rows x out_cols` matrix.
    /// Target rows must be distinct.
    pub fn scatter_rows(
        &mut self,
        a: Var,
        rows: Arc<[usize]>,
        out_rows: usize,
        out_cols: usize,
        col_offset: usize,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        check_shape!(
            rows.len() == x.rows() && col_offset + x.cols() <= out_cols,
            "scatter {:?} into {out_rows}x{out_cols} at column {col_offset}",
            x.shape()
        );
        let mut out = Tensor::zeros(out_rows, out_cols);
        for (i, &r) in rows.iter().enumerate() {
            check_shape!(r < out_rows, "scatter row {r} of {out_rows}");
            out.row_mut(r)[col_offset..col_offset + x.cols()].copy_from_slice(x.row(i));
        }
        let op = Op::ScatterRows {
            x: ia,
            rows,
            col_offset,
        };
        Ok(self.push(out, op, &[ia]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        check_shape!(
            start + len <= x.cols(),
            "columns {start}..{} of {:?}",
            start + len,
            x.shape()
        );
        let value = x.slice_cols(start, len);
        Ok(self.push(value, Op::SliceCols(ia, start), &[ia]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::Shape("concat of zero tensors".into()));
        };
        let rows = self.nodes[first].value.rows();
        let mut cols = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            check_shape!(v.rows() == rows, "concat rows {} and {}", rows, v.rows());
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let orow = out.row_mut(r);
            for &i in &idx {
                let src = self.nodes[i].value.row(r);
                orow[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let parents = idx.clone();
        Ok(self.push(out, Op::ConcatCols(idx), &parents))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.sum());
        Ok(self.push(value, Op::Sum(ia), &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        check_shape!(!x.is_empty(), "mean of an empty tensor");
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        Ok(self.push(value, Op::Mean(ia), &[ia]))
    }

    /// `n x c -> n x 1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let value = Tensor::from_vec(x.rows(), 1, data)?;
        Ok(self.push(value, Op::RowSum(ia), &[ia]))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        check_shape!(
            x.shape() == mask.shape(),
            "mask {:?} for {:?}",
            mask.shape(),
            x.shape()
        );
        let data = x.data().iter().zip(mask.data()).map(|(a, b)| a * b);
        let value = Tensor::from_vec(x.rows(), x.cols(), data.collect())?;
        Ok(self.push(value, Op::MaskMul(ia, mask), &[ia]))
    }

    /// Inverted dropout. Identity (the same variable) when not training or
    /// when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            self.idx(a)?;
            return Ok(a);
        }
        let (rows, cols) = self.shape(a);
        let mask = dropout_mask(rows, cols, rate, seed);
        self.mask_mul(a, mask)
    }

    /// Attention-weighted neighbourhood sum over destination-grouped edges.
    ///
    /// Edges `offsets[v]..offsets[v + 1]` point into `v`; edge `e` carries
    /// message row `src[e]` of `x`. Column `c` of `x` belongs to head
    /// `(c / head_width) % heads` where `heads = alpha.cols()`, and
    /// `out[v, c] = sum_e alpha[e, head(c)] * x[src[e], c]`.
    pub fn edge_aggregate(
        &mut self,
        x: Var,
        alpha: Var,
        src: Arc<[usize]>,
        offsets: Arc<[usize]>,
        head_width: usize,
    ) -> Result<Var> {
        let (ix, ia) = (self.idx(x)?, self.idx(alpha)?);
        let (xv, av) = (&self.nodes[ix].value, &self.nodes[ia].value);
        let heads = av.cols();
        check_shape!(
            av.rows() == src.len() && offsets.last() == Some(&src.len()),
            "alpha {:?} for {} edges",
            av.shape(),
            src.len()
        );
        check_shape!(
            head_width > 0 && xv.cols() % (head_width * heads) == 0,
            "{} columns do not split into {heads} heads of width {head_width}",
            xv.cols()
        );
        let n = offsets.len() - 1;
        let w = xv.cols();
        let mut out = Tensor::zeros(n, w);
        for v in 0..n {
            let orow = &mut out.data_mut()[v * w..(v + 1) * w];
            for e in offsets[v]..offsets[v + 1] {
                let xrow = xv.row(src[e]);
                let arow = av.row(e);
                for (chunk, (o, xs)) in orow
                    .chunks_mut(head_width)
                    .zip(xrow.chunks(head_width))
                    .enumerate()
                {
                    let a = arow[chunk % heads];
                    for (oo, xx) in o.iter_mut().zip(xs) {
                        *oo += a * xx;
                    }
                }
            }
        }
        let op = Op::EdgeAggregate {
            x: ix,
            alpha: ia,
            src,
            offsets,
            head_width,
        };
        Ok(self.push(out, op, &[ix, ia]))
    }

    /// Per-head dot products: `out[v, k] = sum_{c : head(c) = k} x[v, c] * a[0, c]`
    /// with `head(c) = (c / head_width) % heads`.
    pub fn head_scores(&mut self, x: Var, a: Var, head_width: usize, heads: usize) -> Result<Var> {
        let (ix, ia) = (self.idx(x)?, self.idx(a)?);
        let (xv, av) = (&self.nodes[ix].value, &self.nodes[ia].value);
        check_shape!(
            av.rows() == 1 && av.cols() == xv.cols(),
            "attention vector {:?} for {:?}",
            av.shape(),
            xv.shape()
        );
        check_shape!(
            head_width > 0 && heads > 0 && xv.cols() % (head_width * heads) == 0,
            "{} columns do not split into {heads} heads of width {head_width}",
            xv.cols()
        );
        let mut out = Tensor::zeros(xv.rows(), heads);
        for r in 0..xv.rows() {
            let xrow = xv.row(r);
            let orow = out.row_mut(r);
            for (chunk, (xs, as_)) in xrow
                .chunks(head_width)
                .zip(av.data().chunks(head_width))
                .enumerate()
            {
                orow[chunk % heads] += dot(xs, as_);
            }
        }
        let op = Op::HeadScores {
            x: ix,
            a: ia,
            head_width,
        };
        Ok(self.push(out, op, &[ix, ia]))
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut out = self.nodes[ia].value.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = dot(row, row).sqrt().max(L2_FLOOR);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(self.push(out, Op::RowL2Normalize(ia), &[ia]))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::scalar(1.0));
        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.wants(a) {
                    gemm_nt(g, bv, slot(grads, a, av.shape()));
                }
                if self.wants(b) {
                    gemm_tn(av, g, slot(grads, b, bv.shape()));
                }
            }
            &Op::MatMulNt(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.wants(a) {
                    gemm_nn(g, bv, slot(grads, a, av.shape()));
                }
                if self.wants(b) {
                    gemm_tn(g, av, slot(grads, b, bv.shape()));
                }
            }
            &Op::Transpose(a) => {
                if self.wants(a) {
                    let shape = self.nodes[a].value.shape();
                    slot(grads, a, shape).add_scaled(&g.transpose(), 1.0);
                }
            }
            &Op::Add(a, b) => {
                for p in [a, b] {
                    if self.wants(p) {
                        slot(grads, p, g.shape()).add_scaled(g, 1.0);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    slot(grads, a, g.shape()).add_scaled(g, 1.0);
                }
                if self.wants(b) {
                    slot(grads, b, g.shape()).add_scaled(g, -1.0);
                }
            }
            &Op::Mul(a, b) => {
                for (p, q) in [(a, b), (b, a)] {
                    if self.wants(p) {
                        let other = &self.nodes[q].value;
                        let acc = slot(grads, p, g.shape());
                        for ((o, gv), ov) in
                            acc.data_mut().iter_mut().zip(g.data()).zip(other.data())
                        {
                            *o += gv * ov;
                        }
                    }
                }
            }
            &Op::AddRow(a, r) => {
                if self.wants(a) {
                    slot(grads, a, g.shape()).add_scaled(g, 1.0);
                }
                if self.wants(r) {
                    let acc = slot(grads, r, (1, g.cols()));
                    for row in 0..g.rows() {
                        for (o, gv) in acc.data_mut().iter_mut().zip(g.row(row)) {
                            *o += gv;
                        }
                    }
                }
            }
            &Op::Scale(a, f) => {
                if self.wants(a) {
                    slot(grads, a, g.shape()).add_scaled(g, f);
                }
            }
            &Op::ScaleBy(a, s) => {
                let av = &self.nodes[a].value;
                let factor = self.nodes[s].value.data()[0];
                if self.wants(a) {
                    slot(grads, a, g.shape()).add_scaled(g, factor);
                }
                if self.wants(s) {
                    let d = dot(g.data(), av.data());
                    slot(grads, s, (1, 1)).data_mut()[0] += d;
                }
            }
            &Op::Act(a, kind) => {
                if self.wants(a) {
                    let x = &self.nodes[a].value;
                    let acc = slot(grads, a, g.shape());
                    for (((o, gv), xv), yv) in acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(x.data())
                        .zip(y.data())
                    {
                        *o += gv * kind.derivative(*xv, *yv);
                    }
                }
            }
            &Op::Log(a) => {
                if self.wants(a) {
                    let x = &self.nodes[a].value;
                    let acc = slot(grads, a, g.shape());
                    for ((o, gv), xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o += gv / xv;
                    }
                }
            }
            &Op::Clamp(a, lo, hi) => {
                if self.wants(a) {
                    let x = &self.nodes[a].value;
                    let acc = slot(grads, a, g.shape());
                    for ((o, gv), xv) in acc.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if *xv >= lo && *xv <= hi {
                            *o += gv;
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, offsets) => {
                let a = *a;
                if self.wants(a) {
                    let acc = slot(grads, a, g.shape());
                    for w in offsets.windows(2) {
                        for c in 0..g.cols() {
                            let inner: f64 = (w[0]..w[1]).map(|e| y.get(e, c) * g.get(e, c)).sum();
                            for e in w[0]..w[1] {
                                let d = y.get(e, c) * (g.get(e, c) - inner);
                                acc.set(e, c, acc.get(e, c) + d);
                            }
                        }
                    }
                }
            }
            &Op::SoftmaxRows(a) => {
                if self.wants(a) {
                    let acc = slot(grads, a, g.shape());
                    for r in 0..g.rows() {
                        let inner = dot(y.row(r), g.row(r));
                        for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o += yv * (gv - inner);
                        }
                    }
                }
            }
            &Op::LogSoftmaxRows(a) => {
                if self.wants(a) {
                    let acc = slot(grads, a, g.shape());
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o += gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let a = *a;
                if self.wants(a) {
                    let shape = self.nodes[a].value.shape();
                    let acc = slot(grads, a, shape);
                    for (i, &r) in index.iter().enumerate() {
                        for (o, gv) in acc.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ScatterRows {
                x,
                rows,
                col_offset,
            } => {
                let x = *x;
                if self.wants(x) {
                    let shape = self.nodes[x].value.shape();
                    let acc = slot(grads, x, shape);
                    for (i, &r) in rows.iter().enumerate() {
                        let src = &g.row(r)[*col_offset..*col_offset + shape.1];
                        for (o, gv) in acc.row_mut(i).iter_mut().zip(src) {
                            *o += gv;
                        }
                    }
                }
            }
            &Op::SliceCols(a, start) => {
                if self.wants(a) {
                    let shape = self.nodes[a].value.shape();
                    let acc = slot(grads, a, shape);
                    for r in 0..g.rows() {
                        for (o, gv) in acc.row_mut(r)[start..start + g.cols()]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *o += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let shape = self.nodes[p].value.shape();
                    if self.wants(p) {
                        let acc = slot(grads, p, shape);
                        for r in 0..g.rows() {
                            for (o, gv) in
                                acc.row_mut(r).iter_mut().zip(&g.row(r)[off..off + shape.1])
                            {
                                *o += gv;
                            }
                        }
                    }
                    off += shape.1;
                }
            }
            &Op::Sum(a) => {
                if self.wants(a) {
                    let gv = g.data()[0];
                    let shape = self.nodes[a].value.shape();
                    slot(grads, a, shape)
                        .data_mut()
                        .iter_mut()
                        .for_each(|o| *o += gv);
                }
            }
            &Op::Mean(a) => {
                if self.wants(a) {
                    let shape = self.nodes[a].value.shape();
                    let gv = g.data()[0] / (shape.0 * shape.1) as f64;
                    slot(grads, a, shape)
                        .data_mut()
                        .iter_mut()
                        .for_each(|o| *o += gv);
                }
            }
            &Op::RowSum(a) => {
                if self.wants(a) {
                    let shape = self.nodes[a].value.shape();
                    let acc = slot(grads, a, shape);
                    for r in 0..shape.0 {
                        let gv = g.data()[r];
                        acc.row_mut(r).iter_mut().for_each(|o| *o += gv);
                    }
                }
            }
            Op::MaskMul(a, mask) => {
                let a = *a;
                if self.wants(a) {
                    let acc = slot(grads, a, g.shape());
                    for ((o, gv), m) in acc.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        *o += gv * m;
                    }
                }
            }
            Op::EdgeAggregate {
                x,
                alpha,
                src,
                offsets,
                head_width,
            } => {
                let (x, alpha, hw) = (*x, *alpha, *head_width);
                let xv = &self.nodes[x].value;
                let av = &self.nodes[alpha].value;
                let heads = av.cols();
                if self.wants(x) {
                    let acc = slot(grads, x, xv.shape());
                    for v in 0..offsets.len() - 1 {
                        let grow = g.row(v);
                        for e in offsets[v]..offsets[v + 1] {
                            let arow = av.row(e);
                            for (chunk, (o, gs)) in acc
                                .row_mut(src[e])
                                .chunks_mut(hw)
                                .zip(grow.chunks(hw))
                                .enumerate()
                            {
                                let a = arow[chunk % heads];
                                for (oo, gg) in o.iter_mut().zip(gs) {
                                    *oo += a * gg;
                                }
                            }
                        }
                    }
                }
                if self.wants(alpha) {
                    let acc = slot(grads, alpha, av.shape());
                    for v in 0..offsets.len() - 1 {
                        let grow = g.row(v);
                        for e in offsets[v]..offsets[v + 1] {
                            let xrow = xv.row(src[e]);
                            let arow = acc.row_mut(e);
                            for (chunk, (xs, gs)) in
                                xrow.chunks(hw).zip(grow.chunks(hw)).enumerate()
                            {
                                arow[chunk % heads] += dot(xs, gs);
                            }
                        }
                    }
                }
            }
            Op::HeadScores { x, a, head_width } => {
                let (x, a, hw) = (*x, *a, *head_width);
                let xv = &self.nodes[x].value;
                let av = &self.nodes[a].value;
                let heads = g.cols();
                if self.wants(x) {
                    let acc = slot(grads, x, xv.shape());
                    for r in 0..xv.rows() {
                        let grow = g.row(r);
                        for (chunk, (o, as_)) in acc
                            .row_mut(r)
                            .chunks_mut(hw)
                            .zip(av.data().chunks(hw))
                            .enumerate()
                        {
                            let gv = grow[chunk % heads];
                            for (oo, aa) in o.iter_mut().zip(as_) {
                                *oo += gv * aa;
                            }
                        }
                    }
                }
                if self.wants(a) {
                    let acc = slot(grads, a, av.shape());
                    for r in 0..xv.rows() {
                        let grow = g.row(r);
                        for (chunk, (o, xs)) in acc
                            .data_mut()
                            .chunks_mut(hw)
                            .zip(xv.row(r).chunks(hw))
                            .enumerate()
                        {
                            let gv = grow[chunk % heads];
                            for (oo, xx) in o.iter_mut().zip(xs) {
                                *oo += gv * xx;
                            }
                        }
                    }
                }
            }
            &Op::RowL2Normalize(a) => {
                if self.wants(a) {
                    let x = &self.nodes[a].value;
                    let acc = slot(grads, a, x.shape());
                    for r in 0..x.rows() {
                        let norm = dot(x.row(r), x.row(r)).sqrt();
                        if norm < L2_FLOOR {
                            for (o, gv) in acc.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += gv / L2_FLOOR;
                            }
                            continue;
                        }
                        let inner = dot(y.row(r), g.row(r));
                        for ((o, gv), yv) in acc.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o += (gv - yv * inner) / norm;
                        }
                    }
                }
            }
        }
    }
}

const L2_FLOOR: f64 = 1e-12;

fn slot(grads: &mut [Option<Tensor>], i: usize, shape: (usize, usize)) -> &mut Tensor {
    grads[i].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

/// Inverted-dropout mask: entries are `0` with probability `rate` and
/// `1 / (1 - rate)` otherwise.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("mask shape")
}

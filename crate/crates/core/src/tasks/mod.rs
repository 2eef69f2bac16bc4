//! Training objectives, link decoders and evaluation metrics.

mod metrics;

pub use metrics::{
    macro_f1, macro_f1_multilabel, micro_f1, micro_f1_multilabel, mrr, mrr_by_source, roc_auc,
    Candidate,
};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// Labelled nodes of a classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    nodes: Vec<usize>,
    labels: Vec<Vec<usize>>,
    num_classes: usize,
    multilabel: bool,
    #[serde(skip)]
    position: HashMap<usize, usize>,
}

impl LabelSet {
    /// `entries` are `(node, labels)`. Single-label sets need exactly one
    /// label per node; multilabel sets at least one.
    pub fn new(
        entries: Vec<(usize, Vec<usize>)>,
        num_classes: usize,
        multilabel: bool,
    ) -> Result<Self> {
        let mut nodes = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        let mut position = HashMap::with_capacity(entries.len());
        for (node, mut ls) in entries {
            ls.sort_unstable();
            ls.dedup();
            if ls.is_empty() || (!multilabel && ls.len() != 1) {
                return Err(Error::Input(format!(
                    "node {node} has {} labels in a {} task",
                    ls.len(),
                    if multilabel {
                        "multilabel"
                    } else {
                        "single-label"
                    }
                )));
            }
            if let Some(&c) = ls.iter().find(|&&c| c >= num_classes) {
                return Err(Error::Input(format!(
                    "node {node} has label {c}, only {num_classes} classes"
                )));
            }
            if position.insert(node, nodes.len()).is_some() {
                return Err(Error::Input(format!("node {node} labelled twice")));
            }
            nodes.push(node);
            labels.push(ls);
        }
        Ok(Self {
            nodes,
            labels,
            num_classes,
            multilabel,
            position,
        })
    }

    /// Infers the class count from the largest label and treats any node
    /// with more than one label as making the task multilabel.
    pub fn from_entries(entries: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        let classes = entries
            .iter()
            .flat_map(|(_, ls)| ls.iter())
            .max()
            .map_or(0, |&c| c + 1);
        let multilabel = entries.iter().any(|(_, ls)| ls.len() > 1);
        Self::new(entries, classes, multilabel)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn multilabel(&self) -> bool {
        self.multilabel
    }

    pub fn labels_of(&self, node: usize) -> Option<&[usize]> {
        self.index_of(node).map(|i| self.labels[i].as_slice())
    }

    fn index_of(&self, node: usize) -> Option<usize> {
        if self.position.len() == self.nodes.len() {
            self.position.get(&node).copied()
        } else {
            self.nodes.iter().position(|&n| n == node)
        }
    }

    /// `(node, labels)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.nodes
            .iter()
            .zip(&self.labels)
            .map(|(&n, ls)| (n, ls.as_slice()))
    }

    /// 0/1 label matrix with one row per node of `mask`.
    pub fn matrix(&self, mask: &[usize]) -> Result<Tensor> {
        let mut y = Tensor::zeros(mask.len(), self.num_classes);
        for (r, &node) in mask.iter().enumerate() {
            let ls = self
                .labels_of(node)
                .ok_or_else(|| Error::Input(format!("node {node} has no label")))?;
            for &c in ls {
                y.set(r, c, 1.0);
            }
        }
        Ok(y)
    }

    /// The entries whose node is in `nodes`, in the order of `nodes`.
    pub fn restrict(&self, nodes: &[usize]) -> Result<Self> {
        let entries = nodes
            .iter()
            .map(|&n| {
                self.labels_of(n)
                    .map(|ls| (n, ls.to_vec()))
                    .ok_or_else(|| Error::Input(format!("node {n} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, self.num_classes, self.multilabel)
    }
}

/// Classification loss over the rows of `logits` listed in `mask`.
///
/// Single-label: mean softmax cross-entropy. Multilabel: per-class sigmoid
/// and binary cross-entropy averaged over nodes and classes.
pub fn nc_loss(tape: &mut Tape, logits: Var, labels: &LabelSet, mask: &[usize]) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::Input(
            "classification loss over an empty mask".into(),
        ));
    }
    let (n, c) = tape.shape(logits);
    if c != labels.num_classes() {
        return Err(Error::Shape(format!(
            "{c} logits per node for {} classes",
            labels.num_classes()
        )));
    }
    if let Some(&v) = mask.iter().find(|&&v| v >= n) {
        return Err(Error::Input(format!("mask node {v} outside {n} rows")));
    }
    let y = labels.matrix(mask)?;
    let rows = tape.gather_rows(logits, Arc::from(mask))?;
    if !labels.multilabel() {
        let logp = tape.log_softmax_rows(rows)?;
        let picked = tape.mask_mul(logp, y)?;
        let total = tape.sum(picked)?;
        return tape.scale(total, -1.0 / mask.len() as f64);
    }
    let not_y = y.map(|v| 1.0 - v);
    let p = tape.activation(rows, Activation::Sigmoid)?;
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let logp = tape.log(p)?;
    let neg = tape.scale(rows, -1.0)?;
    let q = tape.activation(neg, Activation::Sigmoid)?;
    let q = tape.clamp(q, PROB_EPS, 1.0 - PROB_EPS)?;
    let logq = tape.log(q)?;
    let pos_part = tape.mask_mul(logp, y)?;
    let neg_part = tape.mask_mul(logq, not_y)?;
    let both = tape.add(pos_part, neg_part)?;
    let avg = tape.mean(both)?;
    tape.scale(avg, -1.0)
}

/// Predicted label sets for the rows in `nodes`: arg-max (lowest index on
/// ties) for single-label tasks, positive logits for multilabel ones.
pub fn predict_labels(logits: &Tensor, nodes: &[usize], multilabel: bool) -> Vec<Vec<usize>> {
    nodes
        .iter()
        .map(|&v| {
            let row = logits.row(v);
            if multilabel {
                (0..row.len()).filter(|&c| sigmoid(row[c]) > 0.5).collect()
            } else {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                vec![best]
            }
        })
        .collect()
}

/// Link decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// `sigmoid(<h_v, h_u>)`.
    Dot,
    /// `sigmoid(h_v^T W h_u)`.
    DistMult,
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "distmult" | "dist_mult" => Ok(Self::DistMult),
            other => Err(Error::Config(format!("unknown decoder {other:?}"))),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dot => "dot",
            Self::DistMult => "distmult",
        })
    }
}

fn dot_checked(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of width {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn decode_dot(hv: &[f64], hu: &[f64]) -> Result<f64> {
    Ok(sigmoid(dot_checked(hv, hu)?))
}

pub fn decode_distmult(hv: &[f64], hu: &[f64], w: &Tensor) -> Result<f64> {
    if w.rows() != hv.len() || w.cols() != hu.len() {
        return Err(Error::Shape(format!(
            "bilinear form {:?} for widths {} and {}",
            w.shape(),
            hv.len(),
            hu.len()
        )));
    }
    let mut acc = 0.0;
    for (i, &a) in hv.iter().enumerate() {
        acc += a * dot_checked(w.row(i), hu)?;
    }
    Ok(sigmoid(acc))
}

/// Positive and negative node pairs of a link-prediction split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSamples {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl EdgeSamples {
    pub fn new(positives: Vec<(usize, usize)>, negatives: Vec<(usize, usize)>) -> Result<Self> {
        let pos: HashSet<_> = positives.iter().collect();
        if let Some(p) = negatives.iter().find(|p| pos.contains(p)) {
            return Err(Error::Input(format!(
                "pair {p:?} is both positive and negative"
            )));
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All pairs, positives first, with their 0/1 truth.
    pub fn labelled(&self) -> (Vec<(usize, usize)>, Vec<bool>) {
        let pairs = self
            .positives
            .iter()
            .chain(&self.negatives)
            .copied()
            .collect();
        let truth = std::iter::repeat_n(true, self.positives.len())
            .chain(std::iter::repeat_n(false, self.negatives.len()))
            .collect();
        (pairs, truth)
    }
}

/// Decoder scores before the sigmoid, one row per pair.
pub fn decode_scores(
    tape: &mut Tape,
    h: Var,
    pairs: &[(usize, usize)],
    decoder: Decoder,
    w: Option<Var>,
) -> Result<Var> {
    let src: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let dst: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let hv = tape.gather_rows(h, src)?;
    let hu = tape.gather_rows(h, dst)?;
    let left = match decoder {
        Decoder::Dot => hv,
        Decoder::DistMult => {
            let w = w.ok_or_else(|| Error::Config("distmult decoder needs its matrix".into()))?;
            tape.matmul(hv, w)?
        }
    };
    let prod = tape.mul(left, hu)?;
    tape.row_sum(prod)
}

/// Summed binary cross-entropy over positive and negative pairs.
pub fn lp_loss(
    tape: &mut Tape,
    h: Var,
    samples: &EdgeSamples,
    decoder: Decoder,
    w: Option<Var>,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Input("link loss over no pairs".into()));
    }
    let mut terms = Vec::with_capacity(2);
    for (pairs, sign) in [(&samples.positives, 1.0), (&samples.negatives, -1.0)] {
        if pairs.is_empty() {
            continue;
        }
        let s = decode_scores(tape, h, pairs, decoder, w)?;
        let s = tape.scale(s, sign)?;
        let p = tape.activation(s, Activation::Sigmoid)?;
        let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
        let logp = tape.log(p)?;
        terms.push(tape.sum(logp)?);
    }
    let total = match terms[..] {
        [a] => a,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!(),
    };
    tape.scale(total, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(entries: &[(usize, usize)], c: usize) -> LabelSet {
        LabelSet::new(
            entries.iter().map(|&(n, l)| (n, vec![l])).collect(),
            c,
            false,
        )
        .unwrap()
    }

    fn loss_of(logits: Tensor, labels: &LabelSet, mask: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let x = tape.param(logits);
        let l = nc_loss(&mut tape, x, labels, mask).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let labels = single(&[(0, 1), (1, 0)], 2);
        let logits = Tensor::from_rows(&[[-800.0, 800.0], [800.0, -800.0]]).unwrap();
        assert_eq!(loss_of(logits, &labels, &[0, 1]), 0.0);
    }

    #[test]
    fn uniform_logits_cost_log_c() {
        let labels = single(&[(0, 2), (1, 3)], 4);
        let l = loss_of(Tensor::zeros(2, 4), &labels, &[0, 1]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let labels = single(&[(0, 0)], 2);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(1, 2));
        assert!(nc_loss(&mut tape, x, &labels, &[]).is_err());
    }

    #[test]
    fn multilabel_loss_is_mean_bce() {
        let labels = LabelSet::new(vec![(0, vec![0, 2])], 3, true).unwrap();
        let l = loss_of(Tensor::zeros(1, 3), &labels, &[0]);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSet::new(vec![(0, vec![0, 1])], 2, false).is_err());
        assert!(LabelSet::new(vec![(0, vec![2])], 2, false).is_err());
        assert!(LabelSet::new(vec![(0, vec![0]), (0, vec![1])], 2, false).is_err());
        let ls = LabelSet::from_entries(vec![(3, vec![1, 2]), (5, vec![0])]).unwrap();
        assert!(ls.multilabel());
        assert_eq!(ls.num_classes(), 3);
        assert_eq!(ls.labels_of(3), Some(&[1, 2][..]));
    }

    #[test]
    fn decoder_examples() {
        assert_eq!(decode_dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        let p = decode_dot(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((p - 0.731058).abs() < 1e-6);
        let eye = Tensor::identity(2);
        let (a, b) = ([0.3, -1.2], [2.0, 0.7]);
        assert_eq!(
            decode_distmult(&a, &b, &eye).unwrap(),
            decode_dot(&a, &b).unwrap()
        );
        assert_eq!(decode_distmult(&a, &b, &Tensor::zeros(2, 2)).unwrap(), 0.5);
        assert!(decode_dot(&[1.0], &[1.0, 2.0]).is_err());
        assert!(decode_distmult(&a, &b, &Tensor::zeros(3, 2)).is_err());
    }

    #[test]
    fn lp_loss_at_half_probability() {
        let samples =
            EdgeSamples::new(vec![(0, 1), (1, 2), (2, 3)], vec![(0, 2), (1, 3), (0, 3)]).unwrap();
        let mut tape = Tape::new();
        let h = tape.param(Tensor::zeros(4, 3));
        let l = lp_loss(&mut tape, h, &samples, Decoder::Dot, None).unwrap();
        assert!((tape.value(l).item().unwrap() - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lp_loss_vanishes_when_separated() {
        let samples = EdgeSamples::new(vec![(0, 1)], vec![(0, 2)]).unwrap();
        let h = Tensor::from_rows(&[[10.0], [10.0], [-10.0]]).unwrap();
        let mut tape = Tape::new();
        let h = tape.param(h);
        let l = lp_loss(&mut tape, h, &samples, Decoder::Dot, None).unwrap();
        // Only the probability clamp keeps the loss above zero.
        assert!(tape.value(l).item().unwrap() < 1e-11);
    }

    #[test]
    fn overlapping_samples_are_rejected() {
        assert!(EdgeSamples::new(vec![(0, 1)], vec![(0, 1)]).is_err());
    }

    #[test]
    fn predictions() {
        let logits = Tensor::from_rows(&[[0.1, 0.3, 0.3], [-1.0, 2.0, 0.5]]).unwrap();
        assert_eq!(
            predict_labels(&logits, &[0, 1], false),
            vec![vec![1], vec![1]]
        );
        assert_eq!(predict_labels(&logits, &[1], true), vec![vec![1, 2]]);
    }
}

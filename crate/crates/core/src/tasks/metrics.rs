use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("{a} predictions for {b} truths")));
    }
    Ok(())
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class `(tp, fp, fn)` counts for label sets.
fn confusion(pred: &[Vec<usize>], truth: &[Vec<usize>], classes: usize) -> Result<Vec<[usize; 3]>> {
    check_lengths(pred.len(), truth.len())?;
    let mut counts = vec![[0usize; 3]; classes];
    for (p, t) in pred.iter().zip(truth) {
        for c in 0..classes {
            let (in_p, in_t) = (p.contains(&c), t.contains(&c));
            match (in_p, in_t) {
                (true, true) => counts[c][0] += 1,
                (true, false) => counts[c][1] += 1,
                (false, true) => counts[c][2] += 1,
                (false, false) => {}
            }
        }
        if let Some(&c) = p.iter().chain(t).find(|&&c| c >= classes) {
            return Err(Error::Input(format!("label {c} outside {classes} classes")));
        }
    }
    Ok(counts)
}

fn wrap(labels: &[usize]) -> Vec<Vec<usize>> {
    labels.iter().map(|&l| vec![l]).collect()
}

/// Unweighted mean of per-class F1 over all `classes` classes.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    macro_f1_multilabel(&wrap(pred), &wrap(truth), classes)
}

/// F1 of the counts pooled over classes; accuracy for single-label input.
pub fn micro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    micro_f1_multilabel(&wrap(pred), &wrap(truth), classes)
}

pub fn macro_f1_multilabel(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    classes: usize,
) -> Result<f64> {
    if classes == 0 {
        return Err(Error::Input("F1 over zero classes".into()));
    }
    let counts = confusion(pred, truth, classes)?;
    Ok(counts
        .iter()
        .map(|&[tp, fp, fn_]| f1(tp, fp, fn_))
        .sum::<f64>()
        / classes as f64)
}

pub fn micro_f1_multilabel(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    classes: usize,
) -> Result<f64> {
    let counts = confusion(pred, truth, classes)?;
    let [tp, fp, fn_] = counts.iter().fold([0; 3], |acc, c| {
        [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]
    });
    Ok(f1(tp, fp, fn_))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), truth.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input(
            "ROC-AUC needs both positives and negatives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, ties sharing their average rank (doubled to stay integral).
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_avg = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| truth[k]).count() as u128;
        rank_sum2 += doubled_avg * tied_pos;
        i = j + 1;
    }
    let pos_u = pos as u128;
    let u2 = rank_sum2 - pos_u * (pos_u + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// One scored candidate partner of a source node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub node: usize,
    pub score: f64,
    pub positive: bool,
}

/// Mean over sources of `1 / rank` of the best-ranked positive, candidates
/// sorted by descending score and then ascending node id.
pub fn mrr(lists: &[Vec<Candidate>]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Input("MRR over no sources".into()));
    }
    let mut total = 0.0;
    for (i, list) in lists.iter().enumerate() {
        let mut sorted = list.clone();
        sorted.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.node.cmp(&b.node))
        });
        let rank = sorted
            .iter()
            .position(|c| c.positive)
            .ok_or_else(|| Error::Input(format!("source {i} has no positive candidate")))?;
        total += 1.0 / (rank + 1) as f64;
    }
    Ok(total / lists.len() as f64)
}

/// Groups scored pairs `(v, u)` by `v` (ascending) and computes [`mrr`],
/// skipping sources without a positive partner.
pub fn mrr_by_source(pairs: &[(usize, usize)], scores: &[f64], truth: &[bool]) -> Result<f64> {
    check_lengths(pairs.len(), scores.len())?;
    check_lengths(pairs.len(), truth.len())?;
    let mut by_source: BTreeMap<usize, Vec<Candidate>> = BTreeMap::new();
    for ((&(v, u), &score), &positive) in pairs.iter().zip(scores).zip(truth) {
        by_source.entry(v).or_default().push(Candidate {
            node: u,
            score,
            positive,
        });
    }
    let lists: Vec<_> = by_source
        .into_values()
        .filter(|l| l.iter().any(|c| c.positive))
        .collect();
    mrr(&lists)
}

//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use slotgat::autodiff::{finite_difference_check, Tape, Tensor};
use slotgat::graph::{Edge, HetGraph};
use slotgat::model::{model_forward, Mode, ModelConfig, ModelParams, SlotIntegration};
use slotgat::tasks::{lp_loss, nc_loss, Decoder, EdgeSamples, LabelSet};
use slotgat::Result;

pub const INTEGRATIONS: [SlotIntegration; 4] = [
    SlotIntegration::Attention,
    SlotIntegration::Average,
    SlotIntegration::LastFc,
    SlotIntegration::Target,
];

/// Random typed graph with self-loops. Every type gets at least one node and
/// its own random feature width in `1..=max_feat`.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    types: usize,
    edge_types: usize,
    density: f64,
    max_feat: usize,
) -> HetGraph {
    assert!(n >= types);
    let mut node_type: Vec<usize> = (0..types).collect();
    node_type.extend((types..n).map(|_| rng.random_range(0..types)));
    node_type.shuffle(rng);
    let mut counts = vec![0; types];
    for &t in &node_type {
        counts[t] += 1;
    }
    let features = counts
        .iter()
        .map(|&c| {
            let d = rng.random_range(1..=max_feat);
            Some(Tensor::randn(c, d, 1.0, rng))
        })
        .collect();
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(density) {
                edges.push(Edge::new(s, d, rng.random_range(0..edge_types)));
            }
        }
    }
    HetGraph::new(node_type, types, features, edges, edge_types)
        .unwrap()
        .add_self_loops()
}

pub enum Objective {
    Nc {
        labels: LabelSet,
        mask: Vec<usize>,
    },
    Lp {
        samples: EdgeSamples,
        decoder: Decoder,
    },
}

/// A model with data and an objective, small enough for finite differences.
pub struct Instance {
    pub graph: HetGraph,
    pub cfg: ModelConfig,
    pub params: ModelParams,
    pub objective: Objective,
}

pub fn model_config(g: &HetGraph, out_dim: usize) -> ModelConfig {
    let feat_dims = (0..g.num_node_types())
        .map(|t| g.feature_dim(t).unwrap())
        .collect();
    ModelConfig::new(feat_dims, g.num_edge_types(), out_dim)
}

/// Random instance with `n <= 10`, up to three types, `K <= 2`, `L <= 2`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    integration: SlotIntegration,
    link: Option<Decoder>,
) -> Instance {
    let types = rng.random_range(1..=3);
    let n = rng.random_range(types.max(4)..=10);
    let edge_types = rng.random_range(1..=2);
    let graph = random_graph(rng, n, types, edge_types, 0.3, 3);
    let classes = rng.random_range(2..=3);
    let mut cfg = model_config(&graph, classes);
    cfg.hidden_dim = rng.random_range(2..=3);
    cfg.layers = rng.random_range(1..=2);
    cfg.heads = rng.random_range(1..=2);
    cfg.edge_dim = rng.random_range(0..=2);
    cfg.att_dim = 2;
    cfg.integration = integration;
    cfg.target_types = vec![rng.random_range(0..types)];
    cfg.residual = rng.random_bool(0.3);
    let objective = match link {
        None => {
            let multilabel = rng.random_bool(0.3);
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(rng);
            nodes.truncate(rng.random_range(2..=n));
            nodes.sort_unstable();
            let entries = nodes
                .iter()
                .map(|&v| {
                    let mut ls = vec![rng.random_range(0..classes)];
                    if multilabel && rng.random_bool(0.5) {
                        ls.push((ls[0] + 1) % classes);
                    }
                    (v, ls)
                })
                .collect();
            let labels = LabelSet::new(entries, classes, multilabel).unwrap();
            let mask = nodes[..nodes.len().div_ceil(2).max(1)].to_vec();
            Objective::Nc { labels, mask }
        }
        Some(decoder) => {
            cfg.hidden_embeddings = cfg.layers > 1 && rng.random_bool(0.5);
            let mut pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
                .collect();
            pairs.shuffle(rng);
            let k = rng.random_range(2..=5);
            let positives = pairs[..k].to_vec();
            let negatives = pairs[k..2 * k].to_vec();
            let samples = EdgeSamples::new(positives, negatives).unwrap();
            Objective::Lp { samples, decoder }
        }
    };
    let mut params = ModelParams::init(&cfg, rng).unwrap();
    if let Objective::Lp {
        decoder: Decoder::DistMult,
        ..
    } = objective
    {
        params = params.with_decoder(cfg.output_dim(), rng);
    }
    Instance {
        graph,
        cfg,
        params,
        objective,
    }
}

fn record_loss(
    tape: &mut Tape,
    inst: &Instance,
    params: &ModelParams,
) -> Result<(slotgat::autodiff::Var, Vec<slotgat::autodiff::Var>)> {
    let bound = params.bind(tape);
    let fwd = model_forward(tape, &inst.graph, &bound, &inst.cfg, Mode::EVAL)?;
    let loss = match &inst.objective {
        Objective::Nc { labels, mask } => nc_loss(tape, fwd.output, labels, mask)?,
        Objective::Lp { samples, decoder } => {
            lp_loss(tape, fwd.output, samples, *decoder, bound.decoder)?
        }
    };
    Ok((loss, bound.vars().to_vec()))
}

pub fn loss_value(inst: &Instance, params: &ModelParams) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = record_loss(&mut tape, inst, params)?;
    tape.value(loss).item()
}

/// Tape gradients in [`ModelParams::named_tensors`] order.
pub fn analytic_gradients(inst: &Instance) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let (loss, vars) = record_loss(&mut tape, inst, &inst.params)?;
    let grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v).0, tape.shape(v).1))
        })
        .collect())
}

/// Worst finite-difference error of every parameter tensor, by name.
pub fn gradient_errors(inst: &Instance, eps: f64) -> Result<Vec<(String, f64)>> {
    let grads = analytic_gradients(inst)?;
    let names: Vec<String> = inst
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let mut out = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let param = inst.params.named_tensors()[i].1.clone();
        let err = finite_difference_check(
            &param,
            &grads[i],
            |p| {
                let mut probe = inst.params.clone();
                *probe.tensors_mut()[i] = p.clone();
                loss_value(inst, &probe)
            },
            eps,
        )?;
        out.push((name, err));
    }
    Ok(out)
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Single-type multi-head graph attention written with plain loops over the
/// edge list, sharing no code with the model. Returns the final node
/// representations (`n x out_heads * out_dim`).
pub fn reference_gat(g: &HetGraph, cfg: &ModelConfig, p: &ModelParams) -> Vec<Vec<f64>> {
    assert_eq!(g.num_node_types(), 1);
    let n = g.num_nodes();
    let x = g.features(0).unwrap();
    let matvec = |w: &Tensor, v: &[f64]| -> Vec<f64> {
        (0..w.rows())
            .map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut h: Vec<Vec<f64>> = (0..n).map(|v| matvec(&p.init[0], x.row(v))).collect();
    let edges = g.edges();
    for (l, lp) in p.layers.iter().enumerate() {
        let last = l + 1 == cfg.layers;
        let (heads, dh) = if last {
            (cfg.out_heads, cfg.out_dim)
        } else {
            (cfg.heads, cfg.hidden_dim)
        };
        let z: Vec<Vec<f64>> = h.iter().map(|hv| matvec(&lp.weights[0], hv)).collect();
        // Edge-type term per (type, head): a_rel^k . (W_rel r_type).
        let rel_term = |etype: usize, k: usize| -> f64 {
            if cfg.edge_dim == 0 {
                return 0.0;
            }
            let r = p.edge_emb.row(etype);
            let wr = matvec(&lp.rel_transform, r);
            (0..cfg.edge_dim)
                .map(|j| wr[j] * lp.attn_rel.get(j, k))
                .sum()
        };
        let mut next = vec![vec![0.0; heads * dh]; n];
        for v in 0..n {
            let inc: Vec<&Edge> = edges.iter().filter(|e| e.dst == v).collect();
            for k in 0..heads {
                let seg = k * dh..(k + 1) * dh;
                let dot = |a: &Tensor, u: usize| -> f64 {
                    a.data()[seg.clone()]
                        .iter()
                        .zip(&z[u][seg.clone()])
                        .map(|(x, y)| x * y)
                        .sum()
                };
                let scores: Vec<f64> = inc
                    .iter()
                    .map(|e| {
                        let s =
                            dot(&lp.attn_dst, v) + dot(&lp.attn_src, e.src) + rel_term(e.etype, k);
                        leaky(s, cfg.negative_slope)
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let total: f64 = w.iter().sum();
                for (e, wi) in inc.iter().zip(&w) {
                    for j in seg.clone() {
                        next[v][j] += wi / total * z[e.src][j];
                    }
                }
            }
            if !last {
                next[v].iter_mut().for_each(|x| *x = x.max(0.0));
            }
        }
        h = next;
    }
    h
}

// Brute-force metric definitions, straight from the counting formulas.

pub fn f1_counts(pred: &[usize], truth: &[usize], c: usize) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fneg = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == c && t == c {
            tp += 1;
        } else if p == c {
            fp += 1;
        } else if t == c {
            fneg += 1;
        }
    }
    (tp, fp, fneg)
}

pub fn brute_macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let (tp, fp, fneg) = f1_counts(pred, truth, c);
        let denom = 2 * tp + fp + fneg;
        total += if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
    }
    total / classes as f64
}

pub fn brute_micro_f1(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for c in 0..classes {
        let (a, b, d) = f1_counts(pred, truth, c);
        tp += a;
        fp += b;
        fneg += d;
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating every pair.
pub fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Reciprocal rank of the best positive: one plus the number of candidates
/// ordered strictly before it by (score desc, node asc).
pub fn brute_mrr(lists: &[Vec<(usize, f64, bool)>]) -> f64 {
    let mut total = 0.0;
    for list in lists {
        let best = list
            .iter()
            .filter(|c| c.2)
            .map(|&(node, score, _)| {
                1 + list
                    .iter()
                    .filter(|&&(n2, s2, _)| s2 > score || (s2 == score && n2 < node))
                    .count()
            })
            .min()
            .unwrap();
        total += 1.0 / best as f64;
    }
    total / lists.len() as f64
}

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{model_config, random_graph, reference_gat, INTEGRATIONS};
use slotgat::autodiff::{Tape, Tensor};
use slotgat::graph::{Edge, HetGraph};
use slotgat::model::{forward_values, init_slots, Mode, ModelParams, SlotIntegration};

#[test]
fn single_type_matches_reference_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let n = rng.random_range(2..=12);
        let edge_types = rng.random_range(1..=3);
        let g = random_graph(&mut rng, n, 1, edge_types, 0.3, 4);
        let mut cfg = model_config(&g, rng.random_range(1..=3));
        cfg.layers = rng.random_range(1..=3);
        cfg.heads = rng.random_range(1..=3);
        cfg.hidden_dim = rng.random_range(1..=4);
        cfg.edge_dim = rng.random_range(0..=3);
        cfg.integration = if trial % 2 == 0 {
            SlotIntegration::Average
        } else {
            SlotIntegration::Attention
        };
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let out = forward_values(&g, &params, &cfg, Mode::EVAL)
            .unwrap()
            .output;
        let want = reference_gat(&g, &cfg, &params);
        for v in 0..n {
            for (a, b) in out.row(v).iter().zip(&want[v]) {
                assert!((a - b).abs() < 1e-10, "trial {trial}: node {v}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn init_slots_places_projection_in_own_slot() {
    // Node 0 has type 1, node 1 type 0.
    let x0 = Tensor::from_rows(&[[2.0]]).unwrap();
    let x1 = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
    let g = HetGraph::new(vec![1, 0], 2, vec![Some(x0), Some(x1)], vec![], 1).unwrap();
    let mut tape = Tape::new();
    let w0 = tape.param(Tensor::from_rows(&[[1.0], [3.0]]).unwrap());
    let w1 = tape.param(Tensor::from_rows(&[[1.0, 1.0], [1.0, -1.0]]).unwrap());
    let s = init_slots(&mut tape, &g, &[w0, w1]).unwrap();
    assert_eq!(tape.value(s).row(0), &[0.0, 0.0, 0.0, 2.0]);
    assert_eq!(tape.value(s).row(1), &[2.0, 6.0, 0.0, 0.0]);
}

/// Relabels nodes by `perm` (old id -> new id) within types' feature order.
fn permute(g: &HetGraph, perm: &[usize]) -> HetGraph {
    let n = g.num_nodes();
    let mut node_type = vec![0; n];
    for v in 0..n {
        node_type[perm[v]] = g.node_type(v);
    }
    let features = (0..g.num_node_types())
        .map(|t| {
            let old = g.features(t).unwrap();
            let mut members: Vec<usize> = g.members(t).iter().map(|&v| perm[v]).collect();
            members.sort_unstable();
            let mut f = Tensor::zeros(old.rows(), old.cols());
            for v in g.members(t).iter() {
                let new_row = members.binary_search(&perm[*v]).unwrap();
                f.row_mut(new_row)
                    .copy_from_slice(g.feature_row(*v).unwrap());
            }
            Some(f)
        })
        .collect();
    let edges = g
        .edges()
        .iter()
        .map(|e| Edge::new(perm[e.src], perm[e.dst], e.etype))
        .collect();
    HetGraph::new(
        node_type,
        g.num_node_types(),
        features,
        edges,
        g.num_edge_types(),
    )
    .unwrap()
}

#[test]
fn permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for integration in INTEGRATIONS {
        let g = random_graph(&mut rng, 9, 3, 2, 0.3, 3);
        let mut cfg = model_config(&g, 3);
        cfg.integration = integration;
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..9).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let gp = permute(&g, &perm);
        let a = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
        let b = forward_values(&gp, &params, &cfg, Mode::EVAL).unwrap();
        for v in 0..9 {
            for (x, y) in a.output.row(v).iter().zip(b.output.row(perm[v])) {
                assert!((x - y).abs() < 1e-12, "{integration}: node {v}");
            }
        }
    }
}

#[test]
fn zeroed_type_leaves_its_slot_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let g = random_graph(&mut rng, 10, 3, 2, 0.4, 3);
        let t = rng.random_range(0..3);
        let mut feats = g.all_features().to_vec();
        let f = feats[t].as_ref().unwrap();
        feats[t] = Some(Tensor::zeros(f.rows(), f.cols()));
        let g = g.with_features(feats).unwrap();
        let mut cfg = model_config(&g, 2);
        cfg.layers = 3;
        cfg.residual = rng.random_bool(0.5);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let fwd = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
        for state in &fwd.states {
            for v in 0..g.num_nodes() {
                assert!(state.slot(v, t).iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn identical_heads_give_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_graph(&mut rng, 8, 2, 2, 0.4, 3);
    let mut cfg = model_config(&g, 2);
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden_dim = 3;
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    // Make head 1 of layer 0 a copy of head 0.
    let d = cfg.hidden_dim;
    let lp = &mut params.layers[0];
    for w in &mut lp.weights {
        for r in 0..d {
            let row = w.row(r).to_vec();
            w.row_mut(d + r).copy_from_slice(&row);
        }
    }
    for a in [&mut lp.attn_src, &mut lp.attn_dst] {
        for t in 0..2 {
            let base = t * 2 * d;
            for j in 0..d {
                let x = a.get(0, base + j);
                a.set(0, base + d + j, x);
            }
        }
    }
    for j in 0..cfg.edge_dim {
        let x = lp.attn_rel.get(j, 0);
        lp.attn_rel.set(j, 1, x);
    }
    let fwd = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
    let s = &fwd.states[1];
    for v in 0..g.num_nodes() {
        for t in 0..2 {
            assert_eq!(s.head(v, t, 0), s.head(v, t, 1));
        }
    }
    let alpha = &fwd.attention[0];
    for e in 0..alpha.rows() {
        assert_eq!(alpha.get(e, 0), alpha.get(e, 1));
    }
}

#[test]
fn attention_is_normalised_per_destination() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&mut rng, 12, 3, 3, 0.3, 3);
    let mut cfg = model_config(&g, 2);
    cfg.layers = 3;
    cfg.heads = 3;
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let fwd = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
    let off = g.csr_offsets();
    for alpha in &fwd.attention {
        for v in 0..g.num_nodes() {
            for k in 0..alpha.cols() {
                let s: f64 = (off[v]..off[v + 1]).map(|e| alpha.get(e, k)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
    let beta = fwd.slot_weights.unwrap();
    assert_eq!(beta.shape(), (1, 3));
    assert!((beta.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn average_and_target_integration_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(&mut rng, 7, 2, 1, 0.4, 2);
    for integration in [SlotIntegration::Average, SlotIntegration::Target] {
        let mut cfg = model_config(&g, 2);
        cfg.integration = integration;
        cfg.target_types = vec![1];
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let fwd = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
        let last = fwd.states.last().unwrap();
        for v in 0..7 {
            let want: Vec<f64> = match integration {
                SlotIntegration::Average => last
                    .slot(v, 0)
                    .iter()
                    .zip(last.slot(v, 1))
                    .map(|(a, b)| (a + b) / 2.0)
                    .collect(),
                _ => last.slot(v, 1).to_vec(),
            };
            for (a, b) in fwd.output.row(v).iter().zip(&want) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn slot_attention_weights_are_shared_across_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_graph(&mut rng, 8, 3, 2, 0.4, 3);
    let cfg = model_config(&g, 2);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let fwd = forward_values(&g, &params, &cfg, Mode::EVAL).unwrap();
    let beta = fwd.slot_weights.unwrap();
    let last = fwd.states.last().unwrap();
    for v in 0..8 {
        for j in 0..2 {
            let want: f64 = (0..3).map(|t| beta.get(0, t) * last.slot(v, t)[j]).sum();
            assert!((fwd.output.get(v, j) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn dropout_only_applies_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(&mut rng, 8, 2, 1, 0.4, 3);
    let mut cfg = model_config(&g, 2);
    cfg.dropout_feat = 0.5;
    cfg.dropout_attn = 0.5;
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let eval_a = forward_values(&g, &params, &cfg, Mode::EVAL)
        .unwrap()
        .output;
    let mut plain = cfg.clone();
    plain.dropout_feat = 0.0;
    plain.dropout_attn = 0.0;
    let eval_b = forward_values(&g, &params, &plain, Mode::EVAL)
        .unwrap()
        .output;
    assert_eq!(eval_a, eval_b);
    let t1 = forward_values(&g, &params, &cfg, Mode::train(1))
        .unwrap()
        .output;
    let t1b = forward_values(&g, &params, &cfg, Mode::train(1))
        .unwrap()
        .output;
    let t2 = forward_values(&g, &params, &cfg, Mode::train(2))
        .unwrap()
        .output;
    assert_eq!(t1, t1b);
    assert_ne!(t1, t2);
}

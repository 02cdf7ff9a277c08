//! Reverse-mode gradients against central finite differences.

use std::rc::Rc;

mod common;

use bpgnn::autodiff::{FusionMode, Tape};
use bpgnn::graph::gcn_normalize;
use bpgnn::latent::{ChaChaNoise, GumbelNoise};
use bpgnn::model::{forward_vars, Mode, ParamVars};
use bpgnn::train::graph_loss;
use bpgnn::Tensor;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs `instance` for every seed and asserts on the worst error.
fn suite(name: &str, instance: impl Fn(&mut ChaCha8Rng) -> f64) {
    let worst = (0..INSTANCES)
        .map(|s| instance(&mut ChaCha8Rng::seed_from_u64(s)))
        .fold(0.0, f64::max);
    assert!(worst < REL_TOL, "{name}: worst relative error {worst:e}");
}

#[test]
fn matmul() {
    suite("matmul", |rng| {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let a = random(rng, m, k, -1.0, 1.0);
        let b = random(rng, k, n, -1.0, 1.0);
        check(&[a, b], |_, v| contract(v[0].matmul(v[1]).unwrap(), 1))
    });
}

#[test]
fn relu() {
    suite("relu", |rng| {
        // Keep entries away from the kink.
        let a = Tensor::from_fn(3, 4, |_, _| {
            let x: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { x } else { -x }
        });
        check(&[a], |_, v| contract(v[0].relu(), 2))
    });
}

#[test]
fn exp_and_log() {
    suite("exp", |rng| {
        let a = random(rng, 3, 3, -2.0, 1.0);
        check(&[a], |_, v| contract(v[0].exp(), 3))
    });
    suite("log_eps", |rng| {
        let a = random(rng, 3, 3, 0.05, 2.0);
        check(&[a], |_, v| contract(v[0].log_eps(), 4))
    });
}

#[test]
fn elementwise_and_shape_ops() {
    suite("add/scale/bias/concat", |rng| {
        let a = random(rng, 4, 3, -1.0, 1.0);
        let b = random(rng, 4, 3, -1.0, 1.0);
        let bias = random(rng, 1, 3, -1.0, 1.0);
        let c = random(rng, 4, 2, -1.0, 1.0);
        check(&[a, b, bias, c], |_, v| {
            let s = v[0].add(v[1].scale(-1.7)).unwrap().add_row_bias(v[2]).unwrap();
            contract(s.concat_cols(v[3]).unwrap(), 5)
        })
    });
    suite("sum/dropout", |rng| {
        let a = random(rng, 3, 5, -1.0, 1.0);
        let mask: Vec<f64> = (0..15).map(|_| if rng.random::<bool>() { 0.0 } else { 2.0 }).collect();
        check(&[a], move |_, v| v[0].dropout_mask(mask.clone()).unwrap().exp().sum())
    });
}

#[test]
fn cross_entropy() {
    suite("cross_entropy", |rng| {
        let (n, c) = (rng.random_range(2..7), rng.random_range(2..5));
        let logits = random(rng, n, c, -2.0, 2.0);
        let labels = Rc::new((0..n).map(|_| rng.random_range(0..c)).collect::<Vec<_>>());
        let mask = Rc::new((0..n).filter(|_| rng.random::<f64>() < 0.7).collect::<Vec<_>>());
        let mask = if mask.is_empty() { Rc::new(vec![0]) } else { mask };
        check(&[logits], |_, v| v[0].masked_cross_entropy(&labels, &mask).unwrap())
    });
}

#[test]
fn sparse_propagation() {
    suite("spmm/gcn", |rng| {
        let n = rng.random_range(2..8);
        let g = random_graph(rng, n, 0.4);
        let m = Rc::new(gcn_normalize(&g));
        let x = random(rng, n, 3, -1.0, 1.0);
        check(&[x], |_, v| contract(v[0].spmm(&m).unwrap().gcn_propagate(&g).unwrap(), 6))
    });
}

#[test]
fn edge_probabilities_in_v_and_phi() {
    suite("edge_probabilities", |rng| {
        let n = rng.random_range(2..7);
        let v = random(rng, n, 3, -1.0, 1.0);
        let log_phi = Tensor::scalar(rng.random_range(-0.5..1.0));
        check(&[v, log_phi], |_, x| contract(x[0].edge_probabilities(x[1]).unwrap(), 7))
    });
}

#[test]
fn prob_boolean_product_through_p() {
    suite("prob_boolean_product", |rng| {
        let n = rng.random_range(2..8);
        let a = Rc::new(random_graph(rng, n, 0.35));
        let v = random(rng, n, 2, -1.0, 1.0);
        let log_phi = Tensor::scalar(rng.random_range(-0.5..0.5));
        check(&[v, log_phi], |_, x| {
            let p = x[0].edge_probabilities(x[1]).unwrap();
            contract(p.prob_boolean_product(&a).unwrap(), 8)
        })
    });
}

#[test]
fn gather_and_fused_pairs() {
    for mode in [FusionMode::Asymmetric, FusionMode::Symmetric] {
        suite("fused_pair_probs", |rng| {
            let n = rng.random_range(3..8);
            let a = Rc::new(random_graph(rng, n, 0.4));
            let pairs: Vec<(usize, usize)> =
                (0..6).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
            let v = random(rng, n, 3, -1.0, 1.0);
            let log_phi = Tensor::scalar(rng.random_range(-0.5..0.5));
            check(&[v, log_phi], |_, x| {
                contract(x[0].fused_pair_probs(x[1], &a, pairs.clone(), mode).unwrap().log_eps(), 9)
            })
        });
    }
}

/// The fused op agrees with gathering from the dense route, in value and
/// in gradient.
#[test]
fn fused_pairs_match_dense_route() {
    for seed in 0..INSTANCES {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..9);
        let a = Rc::new(random_graph(rng, n, 0.4));
        let pairs: Vec<(usize, usize)> = (0..8).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let v0 = random(rng, n, 3, -1.0, 1.0);
        let lp0 = Tensor::scalar(0.2);

        let tape = Tape::new();
        let (v, lp) = (tape.param(v0.clone()), tape.param(lp0.clone()));
        let fused = v.fused_pair_probs(lp, &a, pairs.clone(), FusionMode::Asymmetric).unwrap();
        let gf = tape.backward(contract(fused, 10)).unwrap();

        let tape2 = Tape::new();
        let (v2, lp2) = (tape2.param(v0), tape2.param(lp0));
        let dense = v2.edge_probabilities(lp2).unwrap().prob_boolean_product(&a).unwrap().gather(pairs).unwrap();
        let gd = tape2.backward(contract(dense, 10)).unwrap();

        assert!(fused.value().max_abs_diff(&dense.value()) < 1e-12);
        assert!(gf.get(v).unwrap().max_abs_diff(gd.get(v2).unwrap()) < 1e-12);
        assert!(gf.get(lp).unwrap().max_abs_diff(gd.get(lp2).unwrap()) < 1e-12);
    }
}

/// `L_graph` with fixed rewards, differentiated in `Θ^(0)` and `log φ^(0)`.
#[test]
fn graph_loss_in_latent_parameters() {
    suite("graph_loss", |rng| {
        let (input, cfg, params) = small_model(rng, 1);
        let n = input.adjacency.n();
        let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nodes: Vec<usize> = (0..n).collect();
        let noise = ChaChaNoise::new(rng.random());
        let theta = params.latent[0].theta.clone();
        let log_phi = params.latent[0].log_phi.clone();
        check(&[theta, log_phi], |tape, x| {
            let mut vars = ParamVars::register(tape, &params);
            vars.latent[0] = (x[0], x[1]);
            let refs: [&dyn GumbelNoise; 1] = [&noise];
            let mut drng = ChaCha8Rng::seed_from_u64(0);
            let trace = forward_vars(tape, &input, &vars, &cfg, Mode::Eval, &nodes, &refs, &mut drng).unwrap();
            graph_loss(&trace, &delta).unwrap().unwrap()
        })
    });
}

//! Helpers shared by the gradient suite and the acceptance runner.
#![allow(dead_code)]

use bpgnn::autodiff::{Tape, Var};
use bpgnn::graph::SparseAdjacency;
use bpgnn::model::{GraphInput, ModelConfig, ModelParams};
use bpgnn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

pub const H: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseAdjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SparseAdjacency::from_undirected_edges(n, &edges).unwrap()
}

/// Largest relative error between the tape's gradient of the scalar `f` and
/// central differences, over every entry of every input.
pub fn check(inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();

    let eval = |inputs: &[Tensor]| {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).item()
    };
    let mut worst: f64 = 0.0;
    for (x, g) in analytic.iter().enumerate() {
        for m in 0..g.len() {
            let mut plus = inputs.to_vec();
            plus[x].data_mut()[m] += H;
            let mut minus = inputs.to_vec();
            minus[x].data_mut()[m] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[m], numeric));
        }
    }
    worst
}

/// Contracts any matrix to a scalar with fixed random weights.
pub fn contract<'t>(x: Var<'t>, rng_seed: u64) -> Var<'t> {
    let (r, c) = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    x.weighted_sum((0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn small_model(rng: &mut ChaCha8Rng, layers: usize) -> (GraphInput, ModelConfig, ModelParams) {
    let n = rng.random_range(6..10);
    let input = GraphInput {
        features: Rc::new(random(rng, n, 4, -1.0, 1.0)),
        adjacency: Rc::new(random_graph(rng, n, 0.35)),
    };
    let cfg = ModelConfig {
        boolean_layers: layers,
        latent_dims: vec![3, 3],
        hidden_dims: vec![5, 4],
        num_classes: 3,
        gumbel: bpgnn::latent::GumbelConfig { k: 2, seed: 0 },
        init_log_temperature: Some(0.5),
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, 4, rng.random()).unwrap();
    (input, cfg, params)
}


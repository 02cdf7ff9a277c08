//! Accuracy of a GCN and a one-layer Boolean model as random edges are added
//! to the graph.

use anyhow::Result;
use bpgnn::data::{synthetic, SyntheticConfig};
use bpgnn::graph::{perturb_edges, PerturbMode};
use bpgnn::model::ModelConfig;
use bpgnn::train::{fit, TrainConfig};

fn main() -> Result<()> {
    let ds = synthetic(&SyntheticConfig { nodes: 400, features: 24, ..Default::default() })?;
    let train = TrainConfig { epochs: 80, seeds: vec![0, 1], ..TrainConfig::default() };
    println!("ratio   L=0     L=1");
    for ratio in [0.0, 0.5, 1.0] {
        let noisy = ds.with_edges(perturb_edges(&ds.edges, ratio, PerturbMode::Add, 0)?);
        let mut accs = Vec::new();
        for layers in [0, 1] {
            let model = ModelConfig { boolean_layers: layers, ..ModelConfig::default() };
            accs.push(fit(&noisy, &model, &train)?.mean);
        }
        println!("{ratio:<5}   {:.3}   {:.3}", accs[0], accs[1]);
    }
    Ok(())
}

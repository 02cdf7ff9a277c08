//! Test accuracy as a function of the number of Boolean product layers.

use anyhow::Result;
use bpgnn::data::{synthetic, SyntheticConfig};
use bpgnn::model::ModelConfig;
use bpgnn::train::{fit, TrainConfig};

fn main() -> Result<()> {
    let ds = synthetic(&SyntheticConfig { nodes: 400, features: 24, edge_homophily: 0.6, ..Default::default() })?;
    let train = TrainConfig { epochs: 80, seeds: vec![0, 1], ..TrainConfig::default() };
    for layers in 0..=3 {
        let model = ModelConfig { boolean_layers: layers, ..ModelConfig::default() };
        let r = fit(&ds, &model, &train)?;
        println!("L = {layers}: {:.3} ± {:.3}", r.mean, r.std);
    }
    Ok(())
}

//! Trains one seed, then bins test-node pairs by learned edge probability and
//! reports the same-label share per bin.

use anyhow::Result;
use bpgnn::data::{synthetic, SyntheticConfig};
use bpgnn::experiments::{homophily_csv, homophily_of};
use bpgnn::model::ModelConfig;
use bpgnn::train::{fit_seed, TrainConfig};

fn main() -> Result<()> {
    let ds = synthetic(&SyntheticConfig { nodes: 400, features: 24, ..Default::default() })?;
    let model = ModelConfig { boolean_layers: 1, num_classes: ds.num_classes(), ..ModelConfig::default() };
    let train = TrainConfig { epochs: 100, ..TrainConfig::default() };
    let run = fit_seed(&ds, &model, &train, 0)?;
    println!("test accuracy {:.3}", run.test_acc);
    let bins = homophily_of(&ds, &model, &run.best_params, 10, run.seed)?;
    print!("{}", homophily_csv(&bins));
    Ok(())
}

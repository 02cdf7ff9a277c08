//! Draws k out-neighbours per node with Gumbel-top-k and checks that picks
//! follow the edge probabilities.

use anyhow::Result;
use bpgnn::latent::{edge_probabilities, gumbel_topk, gumbel_topk_seeded, ChaChaNoise, GumbelConfig};
use bpgnn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = Tensor::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
    let p = edge_probabilities(&v, 0.5)?;

    let sampled = gumbel_topk_seeded(&p, &GumbelConfig { k: 3, seed: 7 })?;
    for i in 0..8 {
        println!("node {i} -> {:?}", sampled.graph.neighbors(i));
    }

    // Empirical inclusion frequency of each column in row 0 over many draws.
    let draws = 20_000;
    let mut counts = [0u32; 8];
    for seed in 0..draws {
        let s = gumbel_topk(&p, 3, &ChaChaNoise::new(seed))?;
        s.graph.neighbors(0).iter().for_each(|&j| counts[j] += 1);
    }
    println!("\ncolumn  p(0, j)  picked");
    for j in 1..8 {
        println!("{j:>6}  {:.3}    {:.3}", p.get(0, j), counts[j] as f64 / draws as f64);
    }
    Ok(())
}

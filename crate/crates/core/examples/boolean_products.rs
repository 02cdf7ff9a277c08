//! Boolean and probabilistic Boolean products on a five-node path graph.

use anyhow::Result;
use bpgnn::graph::{boolean_mm, prob_boolean_product, symmetric_prob_boolean_product};
use bpgnn::{ProbMatrix, SparseAdjacency, Tensor};

fn main() -> Result<()> {
    let a = SparseAdjacency::from_undirected_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)])?;

    // (A ∘ A)_ij is set when i and j share a neighbour, so every non-isolated
    // node reaches itself.
    let two_hop = boolean_mm(&a, &a)?;
    for i in 0..5 {
        println!("two-step reach of {i}: {:?}", two_hop.neighbors(i));
    }

    // A ◇ P averages P over each node's neighbours. Here P prefers edges
    // between nodes with close indices.
    let p = ProbMatrix::new(Tensor::from_fn(5, 5, |i, j| (-((i as f64 - j as f64).powi(2)) / 2.0).exp()))?;
    let fused = prob_boolean_product(&a, &p)?;
    let sym = symmetric_prob_boolean_product(&a, &p)?;
    println!("\nA ◇ P:");
    for i in 0..5 {
        let row: Vec<String> = (0..5).map(|j| format!("{:.3}", fused.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
    println!("symmetric variant is symmetric: {}", sym.is_symmetric(1e-12));
    Ok(())
}

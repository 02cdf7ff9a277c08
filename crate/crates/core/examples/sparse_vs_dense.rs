//! Times the sparse row-gather product against a dense GEMM with the
//! row-mean operator on growing random graphs.

use anyhow::Result;
use bpgnn::data::{synthetic, SyntheticConfig};
use bpgnn::experiments::{bench_graph, BenchConfig};

fn main() -> Result<()> {
    let cfg = BenchConfig { reps: 3, warmup: 1, ..BenchConfig::default() };
    println!("{:>6} {:>8} {:>10} {:>10} {:>10}", "n", "nnz", "sparse ms", "dense ms", "max diff");
    for nodes in [500, 1000, 2000, 4000] {
        let ds = synthetic(&SyntheticConfig { nodes, train_per_class: 1, val: 1, test: 1, ..Default::default() })?;
        let r = bench_graph(&ds.edges, &cfg, 0)?;
        println!("{:>6} {:>8} {:>10.1} {:>10.1} {:>10.1e}", r.n, r.nnz, r.sparse_ms, r.dense_ms, r.max_abs_diff);
    }
    Ok(())
}

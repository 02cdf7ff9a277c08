//! The structural half of a Boolean product layer.
//!
//! `V = f([U | V_prev], A_l; Θ)` aggregates features on the current graph,
//! `P = g(V; φ)` turns embeddings into edge probabilities, `P̃ = A ◇ P` fuses
//! them with the observed graph and Gumbel-top-k draws the next sparse graph
//! from `P̃`.
//!
//! Gumbel noise is addressed by `(row, column)`: row `i` reads ChaCha stream
//! `i` starting at word position `2·j`, so a sample does not depend on how
//! the columns are traversed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{edge_probability_matrix, kernel_columns, sq_norms, FusionMode, Var, LOG_EPS};
use crate::error::{Error, Result};
use crate::graph::{
    prob_boolean_product, row_mean_product_into, symmetric_prob_boolean_product, ProbMatrix,
    SparseAdjacency,
};
use crate::tensor::Tensor;

/// Sampler settings: out-degree `k` and the seed of the noise stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GumbelConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self { k: 4, seed: 0 }
    }
}

/// `V = ReLU(Â · [U | V_prev] · Θ)` with `Â = gcn_normalize(a_l)`.
pub fn aggregate_features<'t>(
    u: Var<'t>,
    v_prev: Var<'t>,
    a_l: &SparseAdjacency,
    theta: Var<'t>,
) -> Result<Var<'t>> {
    if a_l.n() != u.shape().0 {
        return Err(Error::NodeCount { left: a_l.n(), right: u.shape().0 });
    }
    Ok(u.concat_cols(v_prev)?.matmul(theta)?.gcn_propagate(a_l)?.relu())
}

/// `P_ij = exp(−‖V_i − V_j‖² / φ)`.
/// Median of `‖v_i − v_j‖²` over pairs `i < j` of at most `max_nodes`
/// evenly strided rows.
pub fn median_sq_distance(v: &Tensor, max_nodes: usize) -> f64 {
    let stride = v.rows().div_ceil(max_nodes.max(2)).max(1);
    let rows: Vec<&[f64]> = (0..v.rows()).step_by(stride).map(|i| v.row(i)).collect();
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, ra) in rows.iter().enumerate() {
        for rb in &rows[a + 1..] {
            d.push(ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, f64::total_cmp).1
}

pub fn edge_probabilities(v: &Tensor, phi: f64) -> Result<ProbMatrix> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {phi} must be positive")));
    }
    ProbMatrix::new(edge_probability_matrix(v, phi))
}

/// The Boolean residual `P̃ = A ◇ P` (or its symmetric variant) against the
/// observed graph `a`.
pub fn boolean_residual(a: &SparseAdjacency, p: &ProbMatrix, mode: FusionMode) -> Result<ProbMatrix> {
    match mode {
        FusionMode::Asymmetric => prob_boolean_product(a, p),
        FusionMode::Symmetric => symmetric_prob_boolean_product(a, p),
    }
}

/// Source of the uniforms `q ∈ (0, 1)` behind the Gumbel noise
/// `−log(−log q)`.
pub trait GumbelNoise {
    /// Fills `out` with the uniforms for `(row, col_start + t)`.
    fn uniforms(&self, row: usize, col_start: usize, out: &mut [f64]);
}

/// ChaCha8-backed noise: stream = row, one 32-bit word per column.
#[derive(Clone, Copy, Debug)]
pub struct ChaChaNoise {
    seed: u64,
}

impl ChaChaNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl GumbelNoise for ChaChaNoise {
    fn uniforms(&self, row: usize, col_start: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row as u64);
        rng.set_word_pos(col_start as u128);
        for o in out {
            *o = (rng.next_u32() as f64 + 0.5) * (1.0 / 4294967296.0);
        }
    }
}

/// Running top-k of one row; earlier columns win ties.
#[derive(Clone, Debug)]
struct TopK {
    best: Vec<(f64, usize, f64)>, // (score, column, probability), descending score
    k: usize,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { best: Vec::with_capacity(k + 1), k }
    }

    #[inline]
    fn offer(&mut self, score: f64, col: usize, prob: f64) {
        if self.best.len() == self.k && score <= self.best[self.k - 1].0 {
            return;
        }
        let pos = self.best.partition_point(|e| e.0 >= score);
        self.best.insert(pos, (score, col, prob));
        self.best.truncate(self.k);
    }

    /// Score of the k-th best once the row is full.
    #[inline]
    fn threshold(&self) -> Option<f64> {
        (self.best.len() == self.k).then(|| self.best[self.k - 1].0)
    }

    /// Offers columns `start..` with probabilities `probs` and uniforms `q`,
    /// skipping `skip`. The score `(p + ε) / (−ln q)` orders like
    /// `log(p + ε) − log(−log q)`.
    #[inline]
    fn offer_all(&mut self, skip: usize, start: usize, probs: &[f64], q: &[f64]) {
        for (t, (&p, &q)) in probs.iter().zip(q).enumerate() {
            let j = start + t;
            if j == skip {
                continue;
            }
            let num = p + LOG_EPS;
            if let Some(kth) = self.threshold() {
                // −ln q ≥ 1 − q, so the score is certainly below the k-th.
                if (1.0 - q) * kth > num * (1.0 + 1e-9) {
                    continue;
                }
            }
            self.offer(num / -q.ln(), j, p);
        }
    }
}

/// A sampled directed graph together with `p̃` at each sampled entry
/// (aligned with the CSR entry order).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledGraph {
    pub graph: SparseAdjacency,
    pub probs: Vec<f64>,
}

fn finish(n: usize, rows: Vec<TopK>) -> Result<SampledGraph> {
    let mut lists = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n * rows.first().map_or(0, |r| r.k));
    for r in rows {
        let mut sel: Vec<(usize, f64)> = r.best.iter().map(|&(_, c, p)| (c, p)).collect();
        sel.sort_unstable_by_key(|e| e.0);
        probs.extend(sel.iter().map(|e| e.1));
        lists.push(sel.into_iter().map(|e| e.0).collect());
    }
    Ok(SampledGraph { graph: SparseAdjacency::from_rows(n, lists)?, probs })
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("out-degree k = {k} must satisfy 1 <= k < n = {n}")));
    }
    Ok(())
}

/// Gumbel-top-k: row `i` keeps the `k` columns `j ≠ i` with the largest
/// `log(p̃_ij + ε) − log(−log q_ij)`.
pub fn gumbel_topk(p: &ProbMatrix, k: usize, noise: &dyn GumbelNoise) -> Result<SampledGraph> {
    let n = p.n();
    check_k(k, n)?;
    let mut q = vec![0.0; n];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        noise.uniforms(i, 0, &mut q);
        let mut top = TopK::new(k);
        top.offer_all(i, 0, p.as_tensor().row(i), &q);
        rows.push(top);
    }
    finish(n, rows)
}

/// [`gumbel_topk`] with [`ChaChaNoise`] seeded from `cfg`.
pub fn gumbel_topk_seeded(p: &ProbMatrix, cfg: &GumbelConfig) -> Result<SampledGraph> {
    gumbel_topk(p, cfg.k, &ChaChaNoise::new(cfg.seed))
}

/// What the sampler should draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerInput {
    /// `A ◇ g(V)` in the given fusion mode.
    Fused(FusionMode),
    /// `P̃ ≡ 1`: pure-noise top-k (test hook).
    AllOnes,
}

/// Column-block width of the fused sampler.
pub const SAMPLER_BLOCK: usize = 512;

/// Samples `A^(l+1) = Gumbel-top-k(A ◇ g(V))` without materialising the
/// `n x n` matrices for the asymmetric mode: columns are processed in blocks
/// of `block` and each row keeps a running top-k. The result is identical
/// to `gumbel_topk(boolean_residual(a, edge_probabilities(v, φ)))` under the
/// same noise. The symmetric mode materialises `P̃` densely.
pub fn sample_fused_graph(
    v: &Tensor,
    phi: f64,
    a: &SparseAdjacency,
    input: SamplerInput,
    k: usize,
    noise: &dyn GumbelNoise,
    block: usize,
) -> Result<SampledGraph> {
    let n = v.rows();
    if a.n() != n {
        return Err(Error::NodeCount { left: a.n(), right: n });
    }
    check_k(k, n)?;
    match input {
        SamplerInput::AllOnes => gumbel_topk(&ProbMatrix::ones(n), k, noise),
        SamplerInput::Fused(FusionMode::Symmetric) => {
            let p = edge_probabilities(v, phi)?;
            gumbel_topk(&boolean_residual(a, &p, FusionMode::Symmetric)?, k, noise)
        }
        SamplerInput::Fused(FusionMode::Asymmetric) => {
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(Error::InvalidArgument(format!("temperature {phi} must be positive")));
            }
            let block = block.max(1);
            let mut rows: Vec<TopK> = (0..n).map(|_| TopK::new(k)).collect();
            let mut p_blk = Tensor::zeros(n, block.min(n));
            let mut f_blk = Tensor::zeros(n, block.min(n));
            let norms = sq_norms(v);
            let mut q = vec![0.0; block];
            let mut start = 0;
            while start < n {
                let width = block.min(n - start);
                if width != p_blk.cols() {
                    p_blk = Tensor::zeros(n, width);
                    f_blk = Tensor::zeros(n, width);
                }
                kernel_columns(v, &norms, phi, start, &mut p_blk);
                row_mean_product_into(a, &p_blk, &mut f_blk);
                for (i, top) in rows.iter_mut().enumerate() {
                    let q = &mut q[..width];
                    noise.uniforms(i, start, q);
                    top.offer_all(i, start, f_blk.row(i), q);
                }
                start += width;
            }
            finish(n, rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn one_hot_row_always_selects_its_support() {
        let n = 5;
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, (i + 2) % n, 1.0);
        }
        let p = ProbMatrix::new(t).unwrap();
        for seed in 0..50 {
            let s = gumbel_topk_seeded(&p, &GumbelConfig { k: 1, seed }).unwrap();
            for i in 0..n {
                assert_eq!(s.graph.neighbors(i), &[(i + 2) % n]);
            }
        }
    }

    #[test]
    fn every_row_gets_exactly_k_without_self() {
        let v = Tensor::from_fn(12, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.3);
        let p = edge_probabilities(&v, 1.5).unwrap();
        let s = gumbel_topk_seeded(&p, &GumbelConfig { k: 3, seed: 11 }).unwrap();
        for i in 0..12 {
            assert_eq!(s.graph.degree(i), 3);
            assert!(!s.graph.contains(i, i));
        }
    }

    #[test]
    fn k_must_be_below_n() {
        let p = ProbMatrix::ones(4);
        assert!(gumbel_topk_seeded(&p, &GumbelConfig { k: 4, seed: 0 }).is_err());
        assert!(gumbel_topk_seeded(&p, &GumbelConfig { k: 0, seed: 0 }).is_err());
    }

    #[test]
    fn noise_is_independent_of_traversal() {
        let noise = ChaChaNoise::new(42);
        let mut whole = vec![0.0; 20];
        noise.uniforms(3, 0, &mut whole);
        let mut tail = vec![0.0; 7];
        noise.uniforms(3, 13, &mut tail);
        assert_eq!(&whole[13..], &tail[..]);
        assert!(whole.iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn fused_sampler_matches_dense_route() {
        let n = 23;
        let v = Tensor::from_fn(n, 4, |i, j| ((i * 7 + j * 13) % 17) as f64 / 9.0 - 0.8);
        let a = SparseAdjacency::from_undirected_edges(
            n,
            &(0..n).filter(|i| i % 5 != 0).map(|i| (i, (i * 3 + 1) % n)).collect::<Vec<_>>(),
        )
        .unwrap();
        let noise = ChaChaNoise::new(7);
        let p = edge_probabilities(&v, 0.7).unwrap();
        let dense = gumbel_topk(&boolean_residual(&a, &p, FusionMode::Asymmetric).unwrap(), 3, &noise).unwrap();
        for block in [1, 5, 8, 64] {
            let fused =
                sample_fused_graph(&v, 0.7, &a, SamplerInput::Fused(FusionMode::Asymmetric), 3, &noise, block).unwrap();
            assert_eq!(fused.graph, dense.graph, "block {block}");
            for (x, y) in fused.probs.iter().zip(&dense.probs) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn residual_of_ones_is_ones() {
        let a = SparseAdjacency::from_undirected_edges(4, &[(0, 1), (2, 3)]).unwrap();
        for mode in [FusionMode::Asymmetric, FusionMode::Symmetric] {
            let r = boolean_residual(&a, &ProbMatrix::ones(4), mode).unwrap();
            assert!(r.as_tensor().data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn aggregate_on_isolated_nodes_is_pointwise_linear() {
        let tape = Tape::new();
        let u = tape.constant(Tensor::from_fn(3, 2, |i, j| i as f64 - j as f64));
        let e = tape.constant(Tensor::empty(3));
        let theta = tape.param(Tensor::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap());
        let out = aggregate_features(u, e, &SparseAdjacency::empty(3), theta).unwrap();
        let expected = u.value().matmul(&theta.value()).unwrap().map(|x| x.max(0.0));
        assert!(out.value().max_abs_diff(&expected) < 1e-15);
    }
}

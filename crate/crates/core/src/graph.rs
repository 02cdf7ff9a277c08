//! Binary adjacency in CSR form, Boolean and probabilistic-Boolean products,
//! GCN normalisation and edge perturbation.
//!
//! The probabilistic Boolean product replaces AND/OR by product/sum and
//! normalises by the neighbourhood size:
//!
//! ```text
//! [A ◇ P]_ij = (1 / |N_i(A)|) * Σ_{k ∈ N_i(A)} P_kj
//! ```
//!
//! Rows of `A` with no neighbours pass `P_i·` through unchanged.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// A binary `n x n` matrix in compressed-sparse-row form.
///
/// Column indices are sorted and unique within each row. Graphs built from
/// undirected edge lists are stored symmetrically and never hold self-loops;
/// [`SparseAdjacency::from_rows`] accepts an arbitrary Boolean pattern
/// (products may legitimately contain diagonal entries).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseAdjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    symmetric: bool,
}

impl SparseAdjacency {
    /// Builds an undirected graph: both directions are stored, duplicates
    /// are merged and self-loops dropped.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u != v {
                rows[u].push(v);
                rows[v].push(u);
            }
        }
        let mut g = Self::from_rows_unchecked(n, rows);
        g.symmetric = true;
        Ok(g)
    }

    /// Builds a directed Boolean matrix from per-row neighbour lists.
    /// Lists may be unsorted and contain duplicates.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Graph(format!("{} rows given for {n} nodes", rows.len())));
        }
        if let Some((i, &j)) = rows
            .iter()
            .enumerate()
            .find_map(|(i, r)| r.iter().find(|&&j| j >= n).map(|j| (i, j)))
        {
            return Err(Error::Graph(format!("entry ({i}, {j}) out of range for {n} nodes")));
        }
        Ok(Self::from_rows_unchecked(n, rows))
    }

    fn from_rows_unchecked(n: usize, rows: Vec<Vec<usize>>) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            indices.extend_from_slice(&r);
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, symmetric: false }
    }

    /// The `n x n` identity pattern.
    pub fn identity(n: usize) -> Self {
        Self { n, indptr: (0..=n).collect(), indices: (0..n).collect(), symmetric: true }
    }

    /// `n` isolated nodes.
    pub fn empty(n: usize) -> Self {
        Self { n, indptr: vec![0; n + 1], indices: Vec::new(), symmetric: true }
    }

    /// Reads a dense 0/1 pattern (any non-zero counts as an edge).
    pub fn from_dense(t: &Tensor) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(Error::Shape(format!("adjacency must be square, got {:?}", t.shape())));
        }
        let rows = (0..t.rows())
            .map(|i| (0..t.cols()).filter(|&j| t.get(i, j) != 0.0).collect())
            .collect();
        let mut g = Self::from_rows_unchecked(t.rows(), rows);
        g.symmetric = g.is_pattern_symmetric();
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Whether the graph is flagged as undirected (stored symmetrically).
    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Undirected edge count for symmetric graphs; stored entries otherwise.
    pub fn num_edges(&self) -> usize {
        if self.symmetric {
            let loops = (0..self.n).filter(|&i| self.contains(i, i)).count();
            (self.nnz() - loops) / 2 + loops
        } else {
            self.nnz()
        }
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Mean number of stored entries per node.
    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.n as f64
        }
    }

    /// Fraction of non-zero entries, `nnz / n²`.
    pub fn density(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.n as f64 * self.n as f64)
        }
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n).any(|i| self.contains(i, i))
    }

    /// Checks `(i, j) stored ⇔ (j, i) stored` entry by entry.
    pub fn is_pattern_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.neighbors(i).iter().all(|&j| self.contains(j, i)))
    }

    /// Iterates stored `(row, col)` entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Undirected edges `(i, j)` with `i < j` (self-loops as `(i, i)`).
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.entries().filter(|&(i, j)| i <= j).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j) in self.entries() {
            rows[j].push(i);
        }
        let mut t = Self::from_rows_unchecked(self.n, rows);
        t.symmetric = self.symmetric;
        t
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for (i, j) in self.entries() {
            t.set(i, j, 1.0);
        }
        t
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut rows = vec![Vec::new(); self.n];
        for (i, j) in self.entries() {
            rows[perm[i]].push(perm[j]);
        }
        let mut g = Self::from_rows_unchecked(self.n, rows);
        g.symmetric = self.symmetric;
        g
    }

    /// Induced subgraph on `nodes` (relabelled `0..nodes.len()` in order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in nodes.iter().enumerate() {
            map[old] = new;
        }
        let rows = nodes
            .iter()
            .map(|&old| {
                self.neighbors(old)
                    .iter()
                    .filter_map(|&j| (map[j] != usize::MAX).then_some(map[j]))
                    .collect()
            })
            .collect();
        let mut g = Self::from_rows_unchecked(nodes.len(), rows);
        g.symmetric = self.symmetric;
        g
    }
}

/// A dense `n x n` matrix with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix(Tensor);

impl ProbMatrix {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(Error::Shape(format!("probability matrix must be square, got {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn ones(n: usize) -> Self {
        Self(Tensor::filled(n, n, 1.0))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

fn check_same_n(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::NodeCount { left, right });
    }
    Ok(())
}

/// Boolean matrix product over the AND/OR semiring:
/// `(i, j)` is set iff some `k` has `a(i, k) ∧ b(k, j)`.
pub fn boolean_mm(a: &SparseAdjacency, b: &SparseAdjacency) -> Result<SparseAdjacency> {
    check_same_n(a.n, b.n)?;
    let n = a.n;
    let mut seen = vec![usize::MAX; n];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        for &k in a.neighbors(i) {
            for &j in b.neighbors(k) {
                if seen[j] != i {
                    seen[j] = i;
                    row.push(j);
                }
            }
        }
        rows.push(row);
    }
    Ok(SparseAdjacency::from_rows_unchecked(n, rows))
}

/// `out = M x` where `M` is the row-mean operator of `a` (identity rows for
/// isolated nodes). `x` may have any number of columns; this is the kernel
/// behind [`prob_boolean_product`] and its column-blocked uses.
pub fn row_mean_product(a: &SparseAdjacency, x: &Tensor) -> Result<Tensor> {
    if x.rows() != a.n {
        return Err(Error::Shape(format!("row-mean of {} nodes applied to {} rows", a.n, x.rows())));
    }
    let mut out = Tensor::zeros(a.n, x.cols());
    row_mean_product_into(a, x, &mut out);
    Ok(out)
}

pub(crate) fn row_mean_product_into(a: &SparseAdjacency, x: &Tensor, out: &mut Tensor) {
    for i in 0..a.n {
        let nbrs = a.neighbors(i);
        let dst = out.row_mut(i);
        if nbrs.is_empty() {
            dst.copy_from_slice(x.row(i));
            continue;
        }
        dst.fill(0.0);
        for &k in nbrs {
            for (d, s) in dst.iter_mut().zip(x.row(k)) {
                *d += s;
            }
        }
        let inv = 1.0 / nbrs.len() as f64;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
}

/// Probabilistic Boolean product `A ◇ P` via sparse row gathering, O(nnz(A)·n).
pub fn prob_boolean_product(a: &SparseAdjacency, p: &ProbMatrix) -> Result<ProbMatrix> {
    check_same_n(a.n, p.n())?;
    Ok(ProbMatrix(row_mean_product(a, p.as_tensor())?))
}

/// The row-mean operator of `a` as a dense matrix.
pub fn dense_row_mean_operator(a: &SparseAdjacency) -> Tensor {
    let mut m = Tensor::zeros(a.n, a.n);
    for i in 0..a.n {
        let nbrs = a.neighbors(i);
        if nbrs.is_empty() {
            m.set(i, i, 1.0);
        } else {
            let w = 1.0 / nbrs.len() as f64;
            for &k in nbrs {
                m.set(i, k, w);
            }
        }
    }
    m
}

/// `A ◇ P` as a dense GEMM of the densified row-mean operator with `P`.
/// O(n³); kept for timing comparisons against the sparse path.
pub fn prob_boolean_product_dense(a: &SparseAdjacency, p: &ProbMatrix) -> Result<ProbMatrix> {
    check_same_n(a.n, p.n())?;
    let m = dense_row_mean_operator(a);
    let mut out = Tensor::zeros(a.n, a.n);
    gemm(false, &m, false, p.as_tensor(), 0.0, &mut out);
    // Rounding can push a mean of values in [0,1] a hair outside the range.
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(ProbMatrix(out))
}

/// `(A ◇ P + P ◇ A) / 2`, where `[P ◇ A]_ij` averages `P_ik` over `k ∈ N_j(A)`.
pub fn symmetric_prob_boolean_product(a: &SparseAdjacency, p: &ProbMatrix) -> Result<ProbMatrix> {
    check_same_n(a.n, p.n())?;
    let left = row_mean_product(a, p.as_tensor())?;
    let right = row_mean_product(a, &p.as_tensor().transpose())?.transpose();
    let mut out = left;
    for (o, r) in out.data_mut().iter_mut().zip(right.data()) {
        *o = 0.5 * (*o + r);
    }
    Ok(ProbMatrix(out))
}

/// A real-valued sparse matrix in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                t.set(i, j, v);
            }
        }
        t
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols {
            return Err(Error::Shape(format!(
                "spmm of {}x{} sparse by {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Tensor::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let dst = out.row_mut(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (d, s) in dst.iter_mut().zip(x.row(j)) {
                    *d += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, used for the backward pass of [`SparseMatrix::spmm`].
    pub fn spmm_transpose(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.rows {
            return Err(Error::Shape(format!(
                "transposed spmm of {}x{} sparse by {}x{}",
                self.rows,
                self.cols,
                g.rows(),
                g.cols()
            )));
        }
        let mut out = Tensor::zeros(self.cols, g.cols());
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let src = g.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (d, s) in out.row_mut(j).iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric renormalisation with self-loops: `D̃^{-1/2} (A + I) D̃^{-1/2}`,
/// with `D̃` the row sums of `A + I`.
pub fn gcn_normalize(a: &SparseAdjacency) -> SparseMatrix {
    let n = a.n;
    let deg: Vec<f64> = (0..n)
        .map(|i| (a.degree(i) + usize::from(!a.contains(i, i))) as f64)
        .collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    indptr.push(0);
    for i in 0..n {
        let nbrs = a.neighbors(i);
        let split = nbrs.partition_point(|&j| j < i);
        let has_loop = nbrs.get(split) == Some(&i);
        let row = nbrs[..split]
            .iter()
            .copied()
            .chain(std::iter::once(i))
            .chain(nbrs[split + usize::from(has_loop)..].iter().copied());
        for j in row {
            indices.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        indptr.push(indices.len());
    }
    SparseMatrix { rows: n, cols: n, indptr, indices, values }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Add,
    Delete,
}

impl std::fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbMode::Add => "add",
            PerturbMode::Delete => "delete",
        })
    }
}

/// Adds or deletes `⌊ratio·|E|⌋` undirected edges chosen uniformly at random.
/// Deterministic for a fixed seed; symmetry is preserved.
pub fn perturb_edges(
    a: &SparseAdjacency,
    ratio: f64,
    mode: PerturbMode,
    seed: u64,
) -> Result<SparseAdjacency> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("perturbation ratio {ratio} outside [0, 1]")));
    }
    if !a.symmetric {
        return Err(Error::Graph("edge perturbation needs an undirected graph".into()));
    }
    let n = a.n;
    let edges: Vec<(usize, usize)> = a.undirected_edges().into_iter().filter(|&(i, j)| i != j).collect();
    let count = (ratio * edges.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        PerturbMode::Delete => {
            let mut drop = vec![false; edges.len()];
            for idx in sample(&mut rng, edges.len(), count) {
                drop[idx] = true;
            }
            let kept: Vec<_> = edges.iter().zip(drop).filter(|(_, d)| !d).map(|(e, _)| *e).collect();
            SparseAdjacency::from_undirected_edges(n, &kept)
        }
        PerturbMode::Add => {
            let total_pairs = n * n.saturating_sub(1) / 2;
            let absent = total_pairs - edges.len();
            if count > absent {
                return Err(Error::Infeasible(format!(
                    "cannot add {count} edges: only {absent} node pairs are unconnected"
                )));
            }
            let mut added = Vec::with_capacity(count);
            if count * 2 <= absent {
                let mut chosen = std::collections::HashSet::with_capacity(count);
                while added.len() < count {
                    let u = rng.random_range(0..n);
                    let v = rng.random_range(0..n);
                    let (i, j) = if u < v { (u, v) } else { (v, u) };
                    if i != j && !a.contains(i, j) && chosen.insert((i, j)) {
                        added.push((i, j));
                    }
                }
            } else {
                let candidates: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| !a.contains(i, j))
                    .collect();
                added.extend(sample(&mut rng, candidates.len(), count).into_iter().map(|k| candidates[k]));
            }
            let mut all = edges;
            all.extend(added);
            SparseAdjacency::from_undirected_edges(n, &all)
        }
    }
}

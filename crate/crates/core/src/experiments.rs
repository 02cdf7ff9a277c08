//! Experiment drivers: one JSON config in, CSV and JSON result files out.
//!
//! ```json
//! {
//!   "kind": "train",
//!   "dataset": { "path": "data/cora" },
//!   "model": { "boolean_layers": 2 },
//!   "train": { "epochs": 200 },
//!   "seeds": [0, 1, 2, 3, 4],
//!   "output": "runs/cora"
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Relative paths resolve against
//! the directory holding the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{load_dataset, synthetic, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::graph::{dense_row_mean_operator, perturb_edges, row_mean_product_into, PerturbMode, SparseAdjacency};
use crate::model::{forward, Mode, ModelConfig, ModelParams};
use crate::tensor::{gemm, Tensor};
use crate::train::{fit_seed, homophily_curve_from_embeddings, HomophilyBin, RunResult, SeedRun, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    Robustness,
    Homophily,
    AblationLayers,
    Bench,
}

/// Where the graph comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A four-file dataset directory.
    Path(PathBuf),
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub modes: Vec<PerturbMode>,
    pub ratios: Vec<f64>,
    /// Layer count of the comparison model run under the same perturbations.
    pub baseline_layers: Option<usize>,
    pub perturb_seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            modes: vec![PerturbMode::Add, PerturbMode::Delete],
            ratios: vec![0.25, 0.5, 0.75],
            baseline_layers: Some(0),
            perturb_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomophilyConfig {
    pub bins: usize,
    /// Parameters to evaluate instead of training in place.
    pub checkpoint: Option<PathBuf>,
}

impl Default for HomophilyConfig {
    fn default() -> Self {
        Self { bins: 10, checkpoint: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub layers: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { layers: vec![0, 1, 2, 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    /// Columns of `P` materialised at a time.
    pub block: usize,
    /// Dimension of the random embeddings behind `P`.
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![1000, 2500, 5000, 10000, 19717], reps: 10, warmup: 2, block: 512, latent_dim: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Overrides `train.seeds` when present.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub robustness: RobustnessConfig,
    #[serde(default)]
    pub homophily: HomophilyConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Path(p) = &mut cfg.dataset {
            resolve(p);
        }
        if let Some(p) = &mut cfg.output {
            resolve(p);
        }
        if let Some(p) = &mut cfg.homophily.checkpoint {
            resolve(p);
        }
        Ok(cfg)
    }

    /// The effective training seeds shifted by `offset`.
    pub fn effective_train(&self, offset: u64) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(s) = &self.seeds {
            t.seeds = s.clone();
        }
        t.seeds.iter_mut().for_each(|s| *s = s.wrapping_add(offset));
        t
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Path(p) => load_dataset(p),
            DatasetSource::Synthetic(s) => synthetic(s),
        }
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn fit_runs(ds: &Dataset, model: &ModelConfig, train: &TrainConfig) -> Result<Vec<SeedRun>> {
    if train.seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    train.seeds.iter().map(|&s| fit_seed(ds, model, train, s)).collect()
}

/// `seed,epoch,train_loss,ce_loss,graph_loss,train_acc,val_acc`
pub fn epochs_csv(result: &RunResult) -> String {
    let mut s = String::from("seed,epoch,train_loss,ce_loss,graph_loss,train_acc,val_acc\n");
    for (seed, curve) in result.seeds.iter().zip(&result.curves) {
        for m in curve {
            let _ = writeln!(
                s,
                "{seed},{},{},{},{},{},{}",
                m.epoch, m.train_loss, m.ce_loss, m.graph_loss, m.train_acc, m.val_acc
            );
        }
    }
    s
}

/// Trains over all seeds; writes `metrics.json`, `epochs.csv` and one
/// `model_seed{seed}.ckpt` per seed with the best-validation parameters.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<RunResult> {
    let ds = cfg.load_dataset()?;
    let train = cfg.effective_train(seed_offset);
    let runs = fit_runs(&ds, &cfg.model, &train)?;
    let result = RunResult::from_runs(&runs);
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Config(e.to_string()))?;
    write_file(out, "metrics.json", &json)?;
    write_file(out, "epochs.csv", &epochs_csv(&result))?;
    for r in &runs {
        write_file(out, &format!("model_seed{}.ckpt", r.seed), &r.best_params.to_checkpoint_string())?;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub layers: usize,
    /// `none` for the unperturbed graph.
    pub mode: String,
    pub ratio: f64,
    pub mean: f64,
    pub std: f64,
}

/// For each model (configured `L`, then the baseline) trains on the clean
/// graph and on every `(mode, ratio)` perturbation. Both models see the same
/// perturbed graphs. Writes `robustness.csv`.
pub fn cmd_robustness(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<Vec<RobustnessRow>> {
    let ds = cfg.load_dataset()?;
    let train = cfg.effective_train(seed_offset);
    let rc = &cfg.robustness;
    let mut graphs = vec![("none".to_string(), 0.0, ds.edges.clone())];
    let mut k = 0u64;
    for &mode in &rc.modes {
        for &ratio in &rc.ratios {
            let g = perturb_edges(&ds.edges, ratio, mode, rc.perturb_seed.wrapping_add(k))?;
            graphs.push((mode.to_string(), ratio, g));
            k += 1;
        }
    }
    let mut layer_list = vec![cfg.model.boolean_layers];
    if let Some(b) = rc.baseline_layers {
        if b != cfg.model.boolean_layers {
            layer_list.push(b);
        }
    }
    let mut rows = Vec::new();
    for &layers in &layer_list {
        let model = ModelConfig { boolean_layers: layers, ..cfg.model.clone() };
        for (mode, ratio, g) in &graphs {
            let r = RunResult::from_runs(&fit_runs(&ds.with_edges(g.clone()), &model, &train)?);
            rows.push(RobustnessRow { layers, mode: mode.clone(), ratio: *ratio, mean: r.mean, std: r.std });
        }
    }
    let mut s = String::from("layers,mode,ratio,mean,std\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.layers, r.mode, r.ratio, r.mean, r.std);
    }
    write_file(out, "robustness.csv", &s)?;
    Ok(rows)
}

/// Homophily bins of the last layer's edge probabilities over the test
/// pairs of a trained model.
pub fn homophily_of(ds: &Dataset, model: &ModelConfig, params: &ModelParams, bins: usize, seed: u64) -> Result<Vec<HomophilyBin>> {
    if model.boolean_layers == 0 {
        return Err(Error::Config("homophily needs at least one Boolean layer".into()));
    }
    let tape = Tape::no_grad();
    let trace = forward(&tape, &ds.graph_input(), params, model, Mode::Eval, &[], seed)?;
    let v = trace.layers.last().expect("at least one layer").embeddings.value();
    let phi = params.latent.last().expect("at least one layer").phi();
    homophily_curve_from_embeddings(&v, phi, &ds.labels, &ds.test, bins)
}

/// `bin_lo,bin_hi,pairs,same_label_ratio`; empty bins leave the ratio blank.
pub fn homophily_csv(bins: &[HomophilyBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,pairs,same_label_ratio\n");
    for b in bins {
        let ratio = b.ratio().map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.pairs, ratio);
    }
    s
}

/// Loads `homophily.checkpoint` or trains with the first seed, then writes
/// `homophily.csv`.
pub fn cmd_homophily(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<Vec<HomophilyBin>> {
    let ds = cfg.load_dataset()?;
    let train = cfg.effective_train(seed_offset);
    let seed = *train.seeds.first().ok_or_else(|| Error::Config("no seeds given".into()))?;
    let mut model = cfg.model.clone();
    if model.num_classes == 0 {
        model.num_classes = ds.num_classes();
    }
    let params = match &cfg.homophily.checkpoint {
        Some(p) => ModelParams::load(p, &ModelParams::init(&model, ds.num_features(), seed)?)?,
        None => fit_seed(&ds, &model, &train, seed)?.best_params,
    };
    let bins = homophily_of(&ds, &model, &params, cfg.homophily.bins, seed)?;
    write_file(out, "homophily.csv", &homophily_csv(&bins))?;
    Ok(bins)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub layers: usize,
    pub mean: f64,
    pub std: f64,
}

/// Trains once per layer count; writes `ablation_layers.csv`.
pub fn cmd_ablation_layers(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<Vec<AblationRow>> {
    let ds = cfg.load_dataset()?;
    let train = cfg.effective_train(seed_offset);
    let mut rows = Vec::new();
    for &layers in &cfg.ablation.layers {
        let model = ModelConfig { boolean_layers: layers, ..cfg.model.clone() };
        let r = RunResult::from_runs(&fit_runs(&ds, &model, &train)?);
        rows.push(AblationRow { layers, mean: r.mean, std: r.std });
    }
    let mut s = String::from("layers,mean,std\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{}", r.layers, r.mean, r.std);
    }
    write_file(out, "ablation_layers.csv", &s)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub nnz: usize,
    pub sparse_ms: f64,
    pub dense_ms: f64,
    pub max_abs_diff: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn time_ms(warmup: usize, reps: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect(),
    )
}

/// Times `A ◇ P` on one graph: the sparse row-gather kernel against a dense
/// GEMM with the densified row-mean operator.
///
/// `P = exp(−‖v_i − v_j‖²)` for uniform random `v`. It is produced `block`
/// columns at a time so only `n × block` of it is ever resident; each path's
/// time is the sum over blocks of the per-block median. Building `P` and the
/// dense operator is not timed.
pub fn bench_graph(a: &SparseAdjacency, cfg: &BenchConfig, seed: u64) -> Result<BenchRow> {
    if cfg.reps == 0 || cfg.block == 0 || cfg.latent_dim == 0 {
        return Err(Error::Config("bench reps, block and latent_dim must be positive".into()));
    }
    let n = a.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Tensor::from_fn(n, cfg.latent_dim, |_, _| rng.random::<f64>());
    let dense_op = dense_row_mean_operator(a);
    let (mut sparse_ms, mut dense_ms, mut max_abs_diff) = (0.0, 0.0, 0.0f64);
    for c0 in (0..n).step_by(cfg.block) {
        let w = cfg.block.min(n - c0);
        let p = Tensor::from_fn(n, w, |i, j| {
            let d: f64 = v.row(i).iter().zip(v.row(c0 + j)).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d).exp()
        });
        let mut out_s = Tensor::zeros(n, w);
        let mut out_d = Tensor::zeros(n, w);
        sparse_ms += time_ms(cfg.warmup, cfg.reps, || row_mean_product_into(a, &p, &mut out_s));
        dense_ms += time_ms(cfg.warmup, cfg.reps, || gemm(false, &dense_op, false, &p, 0.0, &mut out_d));
        max_abs_diff = max_abs_diff.max(out_s.max_abs_diff(&out_d));
    }
    Ok(BenchRow { n, nnz: a.nnz(), sparse_ms, dense_ms, max_abs_diff })
}

/// Benchmarks induced subgraphs on random node subsets of each size (the
/// whole graph when the size equals its node count); writes `bench.csv`.
pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<Vec<BenchRow>> {
    let ds = cfg.load_dataset()?;
    let n = ds.num_nodes();
    let seed = cfg.bench.seed.wrapping_add(seed_offset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &size in &cfg.bench.sizes {
        if size == 0 || size > n {
            return Err(Error::Config(format!("bench size {size} outside 1..={n}")));
        }
        let sub = if size == n {
            ds.edges.clone()
        } else {
            let mut nodes = sample(&mut rng, n, size).into_vec();
            nodes.sort_unstable();
            ds.edges.induced_subgraph(&nodes)
        };
        rows.push(bench_graph(&sub, &cfg.bench, seed)?);
    }
    let mut s = String::from("n,nnz,sparse_ms,dense_ms,max_abs_diff\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{},{:e}", r.n, r.nnz, r.sparse_ms, r.dense_ms, r.max_abs_diff);
    }
    write_file(out, "bench.csv", &s)?;
    Ok(rows)
}

/// Dispatches on `cfg.kind`; returns the files' directory.
pub fn run(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> Result<()> {
    match cfg.kind {
        ExperimentKind::Train => cmd_train(cfg, out, seed_offset).map(drop),
        ExperimentKind::Robustness => cmd_robustness(cfg, out, seed_offset).map(drop),
        ExperimentKind::Homophily => cmd_homophily(cfg, out, seed_offset).map(drop),
        ExperimentKind::AblationLayers => cmd_ablation_layers(cfg, out, seed_offset).map(drop),
        ExperimentKind::Bench => cmd_bench(cfg, out, seed_offset).map(drop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let ok = r#"{"kind": "train", "dataset": {"synthetic": {"nodes": 60}}}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
        for bad in [
            r#"{"kind": "train", "dataset": {"path": "x"}, "bogus": 1}"#,
            r#"{"kind": "train", "dataset": {"path": "x"}, "model": {"layers": 2}}"#,
            r#"{"kind": "train", "dataset": {"synthetic": {"nodez": 3}}}"#,
            r#"{"kind": "fly", "dataset": {"path": "x"}}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seeds_override_and_offset() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "train", "dataset": {"path": "x"}, "seeds": [3, 4]}"#).unwrap();
        assert_eq!(cfg.effective_train(10).seeds, vec![13, 14]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn bench_paths_agree() {
        let a = SparseAdjacency::from_undirected_edges(40, &[(0, 1), (1, 2), (5, 9), (9, 30)]).unwrap();
        let cfg = BenchConfig { reps: 1, warmup: 0, block: 7, ..BenchConfig::default() };
        let r = bench_graph(&a, &cfg, 1).unwrap();
        assert!(r.max_abs_diff < 1e-12);
        assert!(r.sparse_ms >= 0.0 && r.dense_ms >= 0.0);
    }
}

//! Dataset directories and synthetic graphs.
//!
//! A dataset directory holds four UTF-8, LF-terminated, tab-separated files:
//!
//! | file           | one line per | content                                 |
//! |----------------|--------------|-----------------------------------------|
//! | `features.tsv` | node         | `d` floats                              |
//! | `labels.tsv`   | node         | class index                             |
//! | `masks.tsv`    | node         | `train`, `val`, `test` or `none`        |
//! | `edges.tsv`    | edge         | `src<TAB>dst`, 0-indexed                |
//!
//! Edges are read as undirected: both directions are stored, duplicates are
//! merged and self-loops dropped.

use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseAdjacency;
use crate::model::GraphInput;
use crate::tensor::Tensor;

pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const MASKS_FILE: &str = "masks.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub edges: SparseAdjacency,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn graph_input(&self) -> GraphInput {
        GraphInput { features: Rc::new(self.features.clone()), adjacency: Rc::new(self.edges.clone()) }
    }

    /// The same dataset over a different edge set.
    pub fn with_edges(&self, edges: SparseAdjacency) -> Self {
        Self { edges, ..self.clone() }
    }

    /// Errors unless every split is non-empty and the invariants hold.
    pub fn check_trainable(&self) -> Result<()> {
        let report = validate(self);
        if let Some(v) = report.violations.first() {
            return Err(Error::Config(format!("dataset {}: {v}", self.name)));
        }
        for (name, m) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if m.is_empty() {
                return Err(Error::Config(format!("dataset {}: {name} split is empty", self.name)));
            }
        }
        Ok(())
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let features = Tensor::from_fn(n, self.num_features(), |i, j| self.features.get(inv[i], j));
        let labels = (0..n).map(|i| self.labels[inv[i]]).collect();
        let map = |m: &Vec<usize>| {
            let mut v: Vec<usize> = m.iter().map(|&i| perm[i]).collect();
            v.sort_unstable();
            v
        };
        Self {
            name: self.name.clone(),
            features,
            labels,
            edges: self.edges.permute(perm),
            train: map(&self.train),
            val: map(&self.val),
            test: map(&self.test),
        }
    }
}

/// Invariant check and summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// `2|E| / n`
    pub average_degree: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(ds: &Dataset) -> ValidationReport {
    let n = ds.num_nodes();
    let mut violations = Vec::new();
    if ds.labels.len() != n {
        violations.push(format!("{} labels for {n} nodes", ds.labels.len()));
    }
    if ds.edges.n() != n {
        violations.push(format!("graph has {} nodes, features have {n}", ds.edges.n()));
    }
    if !ds.edges.is_pattern_symmetric() {
        violations.push("edge set is not symmetric".into());
    }
    if ds.edges.has_self_loops() {
        violations.push("edge set contains self-loops".into());
    }
    if let Some(i) = (0..n).find(|&i| !ds.features.row(i).iter().all(|v| v.is_finite())) {
        violations.push(format!("feature row {i} is not finite"));
    }
    let mut owner = vec![None; n];
    for (name, mask) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for &i in mask {
            if i >= n {
                violations.push(format!("{name} mask holds node {i} >= {n}"));
                continue;
            }
            match owner[i] {
                Some(prev) if prev != name => violations.push(format!("node {i} is in both {prev} and {name}")),
                Some(_) => violations.push(format!("node {i} listed twice in {name}")),
                None => owner[i] = Some(name),
            }
        }
    }
    let num_edges = ds.edges.num_edges();
    ValidationReport {
        num_nodes: n,
        num_edges,
        num_features: ds.num_features(),
        num_classes: ds.num_classes(),
        average_degree: if n == 0 { 0.0 } else { 2.0 * num_edges as f64 / n as f64 },
        train: ds.train.len(),
        val: ds.val.len(),
        test: ds.test.len(),
        violations,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Non-empty-terminated lines with 1-based numbers; a single trailing
/// newline is allowed.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let empty = body.is_empty();
    body.split('\n').enumerate().filter(move |_| !empty).map(|(i, l)| (i + 1, l))
}

/// Loads a dataset directory; the directory name becomes the dataset name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let fpath = dir.join(FEATURES_FILE);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in numbered_lines(&read(&fpath)?) {
        let row = line
            .split('\t')
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| parse_err(&fpath, ln, format!("bad feature value {t:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(&fpath, ln, format!("non-finite feature value {t:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(&fpath, ln, format!("{} features, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let features = Tensor::from_rows(&rows)?;

    let lpath = dir.join(LABELS_FILE);
    let mut labels = Vec::with_capacity(n);
    for (ln, line) in numbered_lines(&read(&lpath)?) {
        labels.push(line.parse::<usize>().map_err(|_| parse_err(&lpath, ln, format!("bad label {line:?}")))?);
    }
    if labels.len() != n {
        return Err(parse_err(&lpath, labels.len().min(n) + 1, format!("{} labels for {n} nodes", labels.len())));
    }

    let mpath = dir.join(MASKS_FILE);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut count = 0;
    for (ln, line) in numbered_lines(&read(&mpath)?) {
        let i = ln - 1;
        match line {
            "train" => train.push(i),
            "val" => val.push(i),
            "test" => test.push(i),
            "none" => {}
            other => return Err(parse_err(&mpath, ln, format!("unknown split {other:?}"))),
        }
        count += 1;
    }
    if count != n {
        return Err(parse_err(&mpath, count.min(n) + 1, format!("{count} mask entries for {n} nodes")));
    }

    let epath = dir.join(EDGES_FILE);
    let mut edges = Vec::new();
    for (ln, line) in numbered_lines(&read(&epath)?) {
        let mut it = line.split('\t');
        let (Some(s), Some(d), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(&epath, ln, format!("expected two columns, got {line:?}")));
        };
        let idx = |t: &str| -> Result<usize> {
            let v: usize = t.parse().map_err(|_| parse_err(&epath, ln, format!("bad node index {t:?}")))?;
            if v >= n {
                return Err(parse_err(&epath, ln, format!("node index {v} out of range for {n} nodes")));
            }
            Ok(v)
        };
        edges.push((idx(s)?, idx(d)?));
    }
    let edges = SparseAdjacency::from_undirected_edges(n, &edges)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset { name, features, labels, edges, train, val, test })
}

/// Writes the four-file layout; each undirected edge once as `i<TAB>j`,
/// `i < j`. Floats use shortest round-trip formatting.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let p: PathBuf = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let mut f = String::new();
    for i in 0..ds.num_nodes() {
        let row: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        f.push_str(&row.join("\t"));
        f.push('\n');
    }
    write(FEATURES_FILE, f)?;
    write(LABELS_FILE, ds.labels.iter().map(|l| format!("{l}\n")).collect())?;
    let mut split = vec!["none"; ds.num_nodes()];
    for (name, m) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for &i in m {
            split[i] = name;
        }
    }
    write(MASKS_FILE, split.iter().map(|s| format!("{s}\n")).collect())?;
    write(
        EDGES_FILE,
        ds.edges.undirected_edges().iter().map(|(i, j)| format!("{i}\t{j}\n")).collect(),
    )
}

/// A planted-partition graph with Gaussian class-conditional features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Expected number of neighbours per node.
    pub average_degree: f64,
    /// Probability that an edge joins two nodes of the same class.
    pub edge_homophily: f64,
    /// Distance between class means relative to unit feature noise.
    pub feature_signal: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 300,
            classes: 3,
            features: 16,
            average_degree: 4.0,
            edge_homophily: 0.8,
            feature_signal: 1.0,
            train_per_class: 10,
            val: 60,
            test: 120,
            seed: 0,
        }
    }
}

/// Generates a [`SyntheticConfig`] dataset. Classes are assigned round-robin,
/// edges are drawn as `average_degree · n / 2` distinct undirected pairs, a
/// share `edge_homophily` of them within a class.
pub fn synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let n = cfg.nodes;
    if cfg.classes == 0 || n < cfg.classes * 2 {
        return Err(Error::InvalidArgument("synthetic graph needs at least two nodes per class".into()));
    }
    if cfg.classes * cfg.train_per_class + cfg.val + cfg.test > n {
        return Err(Error::InvalidArgument("splits exceed the node count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    let by_class: Vec<Vec<usize>> =
        (0..cfg.classes).map(|c| (0..n).filter(|&i| labels[i] == c).collect()).collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.features).map(|_| normal.sample(&mut rng) * cfg.feature_signal / 2f64.sqrt()).collect())
        .collect();
    let features =
        Tensor::from_fn(n, cfg.features, |i, j| means[labels[i]][j] + normal.sample(&mut rng));

    let target = ((cfg.average_degree * n as f64) / 2.0).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let target = target.min(max_edges / 2);
    let mut seen = std::collections::HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let u = rng.random_range(0..n);
        let v = if rng.random::<f64>() < cfg.edge_homophily {
            let c = &by_class[labels[u]];
            c[rng.random_range(0..c.len())]
        } else {
            rng.random_range(0..n)
        };
        let e = (u.min(v), u.max(v));
        if u != v && seen.insert(e) {
            edges.push(e);
        }
    }
    let edges = SparseAdjacency::from_undirected_edges(n, &edges)?;

    let mut train = Vec::new();
    let mut rest = Vec::new();
    for members in &by_class {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..cfg.train_per_class]);
        rest.extend_from_slice(&m[cfg.train_per_class..]);
    }
    rest.shuffle(&mut rng);
    let mut val = rest[..cfg.val].to_vec();
    let mut test = rest[cfg.val..cfg.val + cfg.test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Dataset { name: "synthetic".into(), features, labels, edges, train, val, test })
}

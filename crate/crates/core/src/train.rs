//! Composite loss, the full-batch training loop, evaluation and homophily
//! curves.
//!
//! The graph loss rewards edges that helped correct predictions:
//!
//! ```text
//! L_graph = Σ_i Σ_l Σ_{j ∈ N_i(A^(l))} δ_i · log(p̃_ij^(l+1) + ε)
//! δ_i     = mean(a) − a_i,   a_i = [ŷ_i = y_i]
//! ```
//!
//! `i` runs over the labelled training nodes and the mean is taken over the
//! same nodes in the current forward pass.

use std::rc::Rc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{edge_probability_matrix, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::ProbMatrix;
use crate::model::{argmax_rows, calibrate_temperatures, forward, forward_vars, ForwardTrace, Mode, ModelConfig, ModelParams, ParamVars};
use crate::latent::{ChaChaNoise, GumbelNoise};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight `λ` of the graph loss.
    pub graph_loss_weight: f64,
    pub seeds: Vec<u64>,
    /// Stop after this many epochs without a better validation accuracy.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 5e-3, graph_loss_weight: 1.0, seeds: (0..10).collect(), patience: 50 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.graph_loss_weight >= 0.0) {
            return Err(Error::Config("graph_loss_weight must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// `δ_i = mean(a) − a_i` for the 0/1 correctness flags `a`.
pub fn reward_delta(correct: &[bool]) -> Result<Vec<f64>> {
    if correct.is_empty() {
        return Err(Error::EmptyMask("reward needs at least one labelled node"));
    }
    let mean = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    Ok(correct.iter().map(|&c| mean - f64::from(u8::from(c))).collect())
}

/// `Σ_l Σ_(i,j) δ_i log(p̃_ij + ε)` over the loss pairs of every layer.
/// `delta_by_node` is indexed by node id. `None` when the trace has no
/// Boolean layers.
pub fn graph_loss<'t>(trace: &ForwardTrace<'t>, delta_by_node: &[f64]) -> Result<Option<Var<'t>>> {
    let mut total: Option<Var<'t>> = None;
    for layer in &trace.layers {
        if layer.loss_pairs.is_empty() {
            continue;
        }
        let weights = layer.loss_pairs.iter().map(|&(i, _)| delta_by_node[i]).collect();
        let term = layer.loss_probs.log_eps().weighted_sum(weights)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    if total.is_none() && !trace.layers.is_empty() {
        // No loss pairs at all: an empty sum.
        total = Some(trace.layers[0].loss_probs.sum());
    }
    Ok(total)
}

/// The three loss values of one step.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub cross_entropy: Var<'t>,
    pub graph: Option<Var<'t>>,
}

/// `cross_entropy + λ · graph_loss`, with `δ` from the trace's own
/// predictions on `train`.
pub fn total_loss<'t>(
    trace: &ForwardTrace<'t>,
    labels: &Rc<Vec<usize>>,
    train: &Rc<Vec<usize>>,
    lambda: f64,
) -> Result<LossParts<'t>> {
    let ce = trace.logits.masked_cross_entropy(labels, train)?;
    let graph = if trace.layers.is_empty() {
        None
    } else {
        let preds = argmax_rows(&trace.logits.value());
        let correct: Vec<bool> = train.iter().map(|&i| preds[i] == labels[i]).collect();
        let delta = reward_delta(&correct)?;
        let mut by_node = vec![0.0; labels.len()];
        for (&i, d) in train.iter().zip(delta) {
            by_node[i] = d;
        }
        graph_loss(trace, &by_node)?
    };
    let total = match graph {
        Some(g) if lambda != 0.0 => ce.add(g.scale(lambda))?,
        _ => ce,
    };
    Ok(LossParts { total, cross_entropy: ce, graph })
}

/// Fraction of `mask` whose prediction equals the label.
pub fn accuracy(pred: &[usize], labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("accuracy"));
    }
    Ok(mask.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / mask.len() as f64)
}

/// One stochastic evaluation pass, scored on `mask`.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, dataset: &Dataset, mask: &[usize], seed: u64) -> Result<f64> {
    let input = dataset.graph_input();
    let tape = Tape::no_grad();
    let trace = forward(&tape, &input, params, cfg, Mode::Eval, &[], seed)?;
    accuracy(&argmax_rows(&trace.logits.value()), &dataset.labels, mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce_loss: f64,
    pub graph_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Outcome of training with one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Test accuracy at the epoch with the best validation accuracy.
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochMetrics>,
    pub best_params: ModelParams,
}

/// Aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub best_epochs: Vec<usize>,
    pub curves: Vec<Vec<EpochMetrics>>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

impl RunResult {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let (mean, std) = mean_std(&accuracies);
        Self {
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracies,
            mean,
            std,
            best_epochs: runs.iter().map(|r| r.best_epoch).collect(),
            curves: runs.iter().map(|r| r.curve.clone()).collect(),
        }
    }
}

/// Trains one model from `seed`: parameters, dropout and Gumbel noise all
/// derive from it.
pub fn fit_seed(dataset: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<SeedRun> {
    train_cfg.validate()?;
    dataset.check_trainable()?;
    let mut cfg = model_cfg.clone();
    if cfg.num_classes == 0 {
        cfg.num_classes = dataset.num_classes();
    }
    cfg.validate()?;
    let input = dataset.graph_input();
    let labels = Rc::new(dataset.labels.clone());
    let train = Rc::new(dataset.train.clone());

    let mut params = ModelParams::init(&cfg, dataset.num_features(), seed)?;
    calibrate_temperatures(&mut params, &cfg, &input, seed)?;
    let mut adam = {
        let named = params.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        Adam::new(train_cfg.learning_rate, &refs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fb0_01ea);

    let mut best = (f64::NEG_INFINITY, 0.0, 0usize, params.clone());
    let mut curve = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let (train_loss, ce_loss, g_loss) = {
            let tape = Tape::new();
            let vars = ParamVars::register(&tape, &params);
            let mut step_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let noises: Vec<ChaChaNoise> =
                (0..cfg.boolean_layers).map(|_| ChaChaNoise::new(step_rng.next_u64())).collect();
            let refs: Vec<&dyn GumbelNoise> = noises.iter().map(|n| n as &dyn GumbelNoise).collect();
            let trace = forward_vars(&tape, &input, &vars, &cfg, Mode::Train, &train, &refs, &mut step_rng)?;
            let loss = total_loss(&trace, &labels, &train, train_cfg.graph_loss_weight)?;
            let total = loss.total.item();
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            let grads = tape.backward(loss.total)?;
            let grad_refs: Vec<Option<&Tensor>> = vars.all().into_iter().map(|v| grads.get(v)).collect();
            adam.step(&mut params.tensors_mut(), &grad_refs)?;
            (total, loss.cross_entropy.item(), loss.graph.map_or(0.0, |g| g.item()))
        };

        let tape = Tape::no_grad();
        let trace = forward(&tape, &input, &params, &cfg, Mode::Eval, &[], rng.next_u64())?;
        let preds = argmax_rows(&trace.logits.value());
        let train_acc = accuracy(&preds, &dataset.labels, &dataset.train)?;
        let val_acc = accuracy(&preds, &dataset.labels, &dataset.val)?;
        let test_acc = accuracy(&preds, &dataset.labels, &dataset.test)?;
        curve.push(EpochMetrics { epoch, train_loss, ce_loss, graph_loss: g_loss, train_acc, val_acc });
        if val_acc > best.0 {
            best = (val_acc, test_acc, epoch, params.clone());
        } else if epoch - best.2 >= train_cfg.patience {
            break;
        }
    }
    let (best_val_acc, test_acc, best_epoch, best_params) = best;
    Ok(SeedRun { seed, test_acc, best_val_acc, best_epoch, curve, best_params })
}

/// Trains once per seed of `train_cfg` and aggregates.
pub fn fit(dataset: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<RunResult> {
    if train_cfg.seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let runs = train_cfg
        .seeds
        .iter()
        .map(|&s| fit_seed(dataset, model_cfg, train_cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult::from_runs(&runs))
}

/// One probability interval of a homophily curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomophilyBin {
    pub lo: f64,
    pub hi: f64,
    pub pairs: usize,
    pub same_label: usize,
}

impl HomophilyBin {
    /// Same-label share; `None` for an empty bin.
    pub fn ratio(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.same_label as f64 / self.pairs as f64)
    }
}

fn bin_pairs(
    bins: usize,
    labels: &[usize],
    nodes: &[usize],
    mut prob: impl FnMut(usize, usize) -> f64,
) -> Result<Vec<HomophilyBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("at least one bin is needed".into()));
    }
    let mut out: Vec<HomophilyBin> = (0..bins)
        .map(|b| HomophilyBin {
            lo: b as f64 / bins as f64,
            hi: if b + 1 == bins { 1.0 } else { (b + 1) as f64 / bins as f64 },
            pairs: 0,
            same_label: 0,
        })
        .collect();
    for (a, &i) in nodes.iter().enumerate() {
        for &j in &nodes[a + 1..] {
            let p = prob(i, j);
            // [lo, hi) except the last bin, which is closed.
            let b = ((p * bins as f64).floor() as usize).min(bins - 1);
            out[b].pairs += 1;
            if labels[i] == labels[j] {
                out[b].same_label += 1;
            }
        }
    }
    Ok(out)
}

/// Bins the pairs `i < j` of `nodes` by `p_ij` into `bins` equal intervals
/// of `[0, 1]` and counts same-label pairs per bin.
pub fn homophily_curve(p: &ProbMatrix, labels: &[usize], nodes: &[usize], bins: usize) -> Result<Vec<HomophilyBin>> {
    bin_pairs(bins, labels, nodes, |i, j| p.get(i, j))
}

/// [`homophily_curve`] for `p_ij = exp(−‖v_i − v_j‖² / φ)` restricted to
/// `nodes`, without forming the full matrix.
pub fn homophily_curve_from_embeddings(
    v: &Tensor,
    phi: f64,
    labels: &[usize],
    nodes: &[usize],
    bins: usize,
) -> Result<Vec<HomophilyBin>> {
    let sub = v.select_rows(nodes);
    let p = edge_probability_matrix(&sub, phi);
    let mut pos = vec![usize::MAX; v.rows()];
    for (k, &i) in nodes.iter().enumerate() {
        pos[i] = k;
    }
    bin_pairs(bins, labels, nodes, |i, j| p.get(pos[i], pos[j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_all_correct_or_all_wrong_is_zero() {
        assert!(reward_delta(&[true; 5]).unwrap().iter().all(|&d| d == 0.0));
        assert!(reward_delta(&[false; 5]).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn delta_three_of_four() {
        let d = reward_delta(&[true, false, true, true]).unwrap();
        assert_eq!(d, vec![-0.25, 0.75, -0.25, -0.25]);
        assert_eq!(d.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn delta_needs_nodes() {
        assert!(reward_delta(&[]).is_err());
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 2], &[1, 0, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1, 2], &[1, 0, 2], &[0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0], &[0], &[]).is_err());
    }

    #[test]
    fn homophily_single_label_is_one() {
        let p = ProbMatrix::new(Tensor::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 1.0 / (1 + i + j) as f64 })).unwrap();
        let bins = homophily_curve(&p, &[2; 6], &[0, 1, 2, 3, 4, 5], 10).unwrap();
        assert_eq!(bins.iter().map(|b| b.pairs).sum::<usize>(), 15);
        for b in &bins {
            if let Some(r) = b.ratio() {
                assert_eq!(r, 1.0);
            }
        }
    }

    #[test]
    fn homophily_bins_partition_unit_interval() {
        let p = ProbMatrix::new(Tensor::from_fn(4, 4, |i, j| if (i + j) % 2 == 0 { 1.0 } else { 0.0 })).unwrap();
        let bins = homophily_curve(&p, &[0, 1, 0, 1], &[0, 1, 2, 3], 4).unwrap();
        assert_eq!(bins.first().unwrap().lo, 0.0);
        assert_eq!(bins.last().unwrap().hi, 1.0);
        for w in bins.windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
        }
        // p = 1 lands in the closed last bin, p = 0 in the first.
        assert_eq!(bins[3].pairs, 2);
        assert_eq!(bins[0].pairs, 4);
        assert_eq!(bins[3].ratio(), Some(1.0));
        assert_eq!(bins[0].ratio(), Some(0.0));
        assert_eq!(bins[1].ratio(), None);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}

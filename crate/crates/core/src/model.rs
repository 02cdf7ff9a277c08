//! The Boolean product GNN: `L` latent layers paired with a GCN stack and a
//! linear classifier head.
//!
//! One forward pass runs, for `l = 0..L`:
//!
//! ```text
//! V^(l+1)  = f([U^(l) | V^(l)], A^(l); Θ^(l))
//! P^(l+1)  = g(V^(l+1); φ^(l))
//! P̃^(l+1) = A ◇ P^(l+1)                    (always the observed A)
//! A^(l+1)  = Gumbel-top-k(P̃^(l+1))
//! U^(l+1)  = GNN(A^(l+1), U^(l); W^(l))
//! ```
//!
//! starting from `U^(0) = X`, `A^(0) = A`, `V^(0) = ∅`. GCN layers beyond
//! the `L`-th reuse the last sampled graph (the observed graph when `L = 0`).

use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FusionMode, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::SparseAdjacency;
use crate::latent::{aggregate_features, median_sq_distance, sample_fused_graph, ChaChaNoise, GumbelConfig, GumbelNoise, SampledGraph, SamplerInput, SAMPLER_BLOCK};
use crate::tensor::Tensor;

/// Which sampled graph supplies the neighbour sets of the graph loss for
/// the probabilities of layer `l + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphLossPairing {
    /// `N_i(A^(l))`: the graph the layer's aggregator ran on.
    #[default]
    PreviousGraph,
    /// `N_i(A^(l+1))`: the graph just sampled from `P̃^(l+1)`.
    SampledGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of Boolean product layers `L`; `0` is a plain GCN.
    pub boolean_layers: usize,
    /// Embedding width of `f` per Boolean layer.
    pub latent_dims: Vec<usize>,
    /// Widths of the task GCN layers.
    pub hidden_dims: Vec<usize>,
    /// Number of classes; `0` means "take it from the dataset".
    pub num_classes: usize,
    pub gumbel: GumbelConfig,
    pub fusion: FusionMode,
    pub graph_loss_pairing: GraphLossPairing,
    /// Dropout on the inputs of the task GCN layers while training.
    pub dropout: f64,
    /// Initial `log φ` of every Boolean layer. When absent, `φ^(l)` starts at
    /// `temperature_scale` times the median pairwise squared distance of the
    /// layer's initial embeddings (see [`calibrate_temperatures`]).
    pub init_log_temperature: Option<f64>,
    pub temperature_scale: f64,
    /// Test hook: sample from `P̃ ≡ 1` instead of the fused probabilities.
    pub noise_only_sampling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            boolean_layers: 2,
            latent_dims: vec![16, 16, 16],
            hidden_dims: vec![32, 16, 8],
            num_classes: 0,
            gumbel: GumbelConfig::default(),
            fusion: FusionMode::Asymmetric,
            graph_loss_pairing: GraphLossPairing::PreviousGraph,
            dropout: 0.5,
            init_log_temperature: None,
            temperature_scale: 0.02,
            noise_only_sampling: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be non-empty and positive".into()));
        }
        if self.boolean_layers > self.hidden_dims.len() {
            return Err(Error::Config(format!(
                "{} Boolean layers need at least as many GCN layers, got {}",
                self.boolean_layers,
                self.hidden_dims.len()
            )));
        }
        if self.latent_dims.len() < self.boolean_layers || self.latent_dims[..self.boolean_layers].contains(&0) {
            return Err(Error::Config("latent_dims needs a positive width per Boolean layer".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.temperature_scale > 0.0 && self.temperature_scale.is_finite()) {
            return Err(Error::Config("temperature_scale must be positive".into()));
        }
        if self.gumbel.k == 0 {
            return Err(Error::Config("gumbel.k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters `Θ^(l)`, `φ^(l)` (as `log φ`) of one Boolean layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentLayerParams {
    pub theta: Tensor,
    pub log_phi: Tensor,
}

impl LatentLayerParams {
    pub fn phi(&self) -> f64 {
        self.log_phi.item().exp()
    }
}

/// All trainable tensors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub latent: Vec<LatentLayerParams>,
    pub gnn: Vec<Tensor>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights, zero bias, `log φ` from the config.
    pub fn init(cfg: &ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut latent = Vec::with_capacity(cfg.boolean_layers);
        let mut u_dim = in_dim;
        let mut v_dim = 0;
        for l in 0..cfg.boolean_layers {
            let out = cfg.latent_dims[l];
            latent.push(LatentLayerParams {
                theta: glorot(u_dim + v_dim, out, &mut rng),
                log_phi: Tensor::scalar(cfg.init_log_temperature.unwrap_or(0.0)),
            });
            u_dim = cfg.hidden_dims[l];
            v_dim = out;
        }
        let mut gnn = Vec::with_capacity(cfg.hidden_dims.len());
        let mut prev = in_dim;
        for &h in &cfg.hidden_dims {
            gnn.push(glorot(prev, h, &mut rng));
            prev = h;
        }
        Ok(Self {
            latent,
            gnn,
            head_weight: glorot(prev, cfg.num_classes, &mut rng),
            head_bias: Tensor::zeros(1, cfg.num_classes),
        })
    }

    /// Parameters with stable names, in optimizer order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, p) in self.latent.iter().enumerate() {
            out.push((format!("latent.{l}.theta"), &p.theta));
            out.push((format!("latent.{l}.log_phi"), &p.log_phi));
        }
        for (l, w) in self.gnn.iter().enumerate() {
            out.push((format!("gnn.{l}.weight"), w));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for p in &mut self.latent {
            out.push(&mut p.theta);
            out.push(&mut p.log_phi);
        }
        out.extend(self.gnn.iter_mut());
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Writes the textual checkpoint format:
    ///
    /// ```text
    /// bpgnn-params v1
    /// <name> <rows> <cols>
    /// <row-major values separated by spaces>
    /// ```
    ///
    /// Values use Rust's shortest round-trip float formatting, so a load
    /// restores every bit.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::from("bpgnn-params v1\n");
        for (name, t) in self.named() {
            let _ = writeln!(s, "{name} {} {}", t.rows(), t.cols());
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses a checkpoint; names and shapes must match `template`.
    pub fn from_checkpoint_str(text: &str, template: &ModelParams) -> Result<Self> {
        let path = Path::new("<checkpoint>");
        let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "bpgnn-params v1")) => {}
            Some((_, other)) => return Err(perr(1, format!("unsupported header {other:?}"))),
            None => return Err(perr(1, "empty checkpoint".into())),
        }
        let mut out = template.clone();
        let expected: Vec<(String, (usize, usize))> =
            template.named().into_iter().map(|(n, t)| (n, t.shape())).collect();
        let targets = out.tensors_mut();
        if targets.len() != expected.len() {
            return Err(perr(0, "internal parameter count mismatch".into()));
        }
        for ((name, shape), target) in expected.into_iter().zip(targets) {
            let (ln, header) = lines.next().ok_or_else(|| perr(0, format!("missing tensor {name}")))?;
            let mut parts = header.split(' ');
            let got_name = parts.next().unwrap_or_default();
            let dims: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| perr(ln + 1, format!("bad dimension {p:?}"))))
                .collect::<Result<_>>()?;
            if got_name != name || dims != [shape.0, shape.1] {
                return Err(perr(ln + 1, format!("expected {name} {}x{}, found {header:?}", shape.0, shape.1)));
            }
            let (ln, body) = lines.next().ok_or_else(|| perr(ln + 2, format!("missing values of {name}")))?;
            let vals: Vec<f64> = if body.is_empty() {
                Vec::new()
            } else {
                body.split(' ')
                    .map(|v| v.parse().map_err(|_| perr(ln + 1, format!("bad value {v:?}"))))
                    .collect::<Result<_>>()?
            };
            if vals.len() != shape.0 * shape.1 {
                return Err(perr(ln + 1, format!("{name}: {} values for {}x{}", vals.len(), shape.0, shape.1)));
            }
            target.data_mut().copy_from_slice(&vals);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(perr(ln + 1, format!("unexpected trailing content {extra:?}")));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, template: &ModelParams) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, template).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: path.to_path_buf(), line, msg },
            other => other,
        })
    }
}

/// Tape handles for a [`ModelParams`].
pub struct ParamVars<'t> {
    pub latent: Vec<(Var<'t>, Var<'t>)>,
    pub gnn: Vec<Var<'t>>,
    pub head_weight: Var<'t>,
    pub head_bias: Var<'t>,
}

impl<'t> ParamVars<'t> {
    pub fn register(tape: &'t Tape, params: &ModelParams) -> Self {
        Self {
            latent: params
                .latent
                .iter()
                .map(|p| (tape.param(p.theta.clone()), tape.param(p.log_phi.clone())))
                .collect(),
            gnn: params.gnn.iter().map(|w| tape.param(w.clone())).collect(),
            head_weight: tape.param(params.head_weight.clone()),
            head_bias: tape.param(params.head_bias.clone()),
        }
    }

    /// In the same order as [`ModelParams::tensors_mut`].
    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for &(t, p) in &self.latent {
            out.push(t);
            out.push(p);
        }
        out.extend(self.gnn.iter().copied());
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }
}

/// What one Boolean layer produced.
pub struct LayerTrace<'t> {
    /// `A^(l+1)` and `p̃^(l+1)` at its entries.
    pub sampled: SampledGraph,
    /// Embeddings `V^(l+1)`.
    pub embeddings: Var<'t>,
    /// Neighbour pairs `(i, j)` of the graph loss, for the loss nodes.
    pub loss_pairs: Vec<(usize, usize)>,
    /// `p̃^(l+1)` at `loss_pairs`, differentiable in `Θ^(l)` and `φ^(l)`.
    pub loss_probs: Var<'t>,
}

pub struct ForwardTrace<'t> {
    pub logits: Var<'t>,
    pub layers: Vec<LayerTrace<'t>>,
}

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inputs shared by every forward pass over one graph.
pub struct GraphInput {
    pub features: Rc<Tensor>,
    pub adjacency: Rc<SparseAdjacency>,
}

/// `ReLU(Â · u · W)` (no ReLU on the last layer) with `Â = gcn_normalize(a)`.
pub fn gnn_layer<'t>(a: &SparseAdjacency, u: Var<'t>, w: Var<'t>, activate: bool) -> Result<Var<'t>> {
    if a.n() != u.shape().0 {
        return Err(Error::NodeCount { left: a.n(), right: u.shape().0 });
    }
    let h = u.matmul(w)?.gcn_propagate(a)?;
    Ok(if activate { h.relu() } else { h })
}

fn dropout<'t>(u: Var<'t>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    if rate == 0.0 {
        return Ok(u);
    }
    let keep = 1.0 / (1.0 - rate);
    let n = u.shape().0 * u.shape().1;
    let mask = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    u.dropout_mask(mask)
}

/// Runs the model with ChaCha noise derived from `seed`: layer `l` samples
/// with the `l`-th `u64` drawn from `ChaCha8(seed)`, dropout uses the rest.
pub fn forward<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    loss_nodes: &[usize],
    seed: u64,
) -> Result<ForwardTrace<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises: Vec<ChaChaNoise> = (0..cfg.boolean_layers).map(|_| ChaChaNoise::new(rng.next_u64())).collect();
    let refs: Vec<&dyn GumbelNoise> = noises.iter().map(|n| n as &dyn GumbelNoise).collect();
    forward_with_noise(tape, input, params, cfg, mode, loss_nodes, &refs, &mut rng)
}

/// [`forward`] with explicit per-layer noise sources.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_noise<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    loss_nodes: &[usize],
    noise: &[&dyn GumbelNoise],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<ForwardTrace<'t>> {
    let vars = ParamVars::register(tape, params);
    forward_vars(tape, input, &vars, cfg, mode, loss_nodes, noise, dropout_rng)
}

/// The forward pass over already-registered parameters.
#[allow(clippy::too_many_arguments)]
pub fn forward_vars<'t>(
    tape: &'t Tape,
    input: &GraphInput,
    vars: &ParamVars<'t>,
    cfg: &ModelConfig,
    mode: Mode,
    loss_nodes: &[usize],
    noise: &[&dyn GumbelNoise],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<ForwardTrace<'t>> {
    let n = input.adjacency.n();
    if input.features.rows() != n {
        return Err(Error::NodeCount { left: n, right: input.features.rows() });
    }
    if vars.latent.len() != cfg.boolean_layers || vars.gnn.len() != cfg.hidden_dims.len() {
        return Err(Error::Config("parameters do not match the model configuration".into()));
    }
    if noise.len() < cfg.boolean_layers {
        return Err(Error::InvalidArgument(format!("{} noise sources for {} layers", noise.len(), cfg.boolean_layers)));
    }
    let observed = &input.adjacency;
    let sampler_input =
        if cfg.noise_only_sampling { SamplerInput::AllOnes } else { SamplerInput::Fused(cfg.fusion) };

    let mut u = tape.constant(Rc::clone(&input.features));
    let mut v = tape.constant(Tensor::empty(n));
    let mut graph: Rc<SparseAdjacency> = Rc::clone(observed);
    let mut layers = Vec::with_capacity(cfg.boolean_layers);
    let last = cfg.hidden_dims.len() - 1;

    for (l, &w) in vars.gnn.iter().enumerate() {
        if l < cfg.boolean_layers {
            let (theta, log_phi) = vars.latent[l];
            // U enters f as a constant: W learns from the cross-entropy only.
            let u_const = tape.constant(u.value());
            let emb = aggregate_features(u_const, v, &graph, theta)?;
            let phi = log_phi.item().exp();
            let sampled = sample_fused_graph(&emb.value(), phi, observed, sampler_input, cfg.gumbel.k, noise[l], SAMPLER_BLOCK)?;
            let pair_graph = match cfg.graph_loss_pairing {
                GraphLossPairing::PreviousGraph => &*graph,
                GraphLossPairing::SampledGraph => &sampled.graph,
            };
            let loss_pairs: Vec<(usize, usize)> = loss_nodes
                .iter()
                .flat_map(|&i| pair_graph.neighbors(i).iter().map(move |&j| (i, j)))
                .collect();
            let loss_probs = emb.fused_pair_probs(log_phi, observed, loss_pairs.clone(), cfg.fusion)?;
            graph = Rc::new(sampled.graph.clone());
            v = emb;
            layers.push(LayerTrace { sampled, embeddings: emb, loss_pairs, loss_probs });
        }
        let inp = if mode == Mode::Train { dropout(u, cfg.dropout, dropout_rng)? } else { u };
        u = gnn_layer(&graph, inp, w, l != last)?;
    }
    let logits = u.matmul(vars.head_weight)?.add_row_bias(vars.head_bias)?;
    if !logits.value().all_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(ForwardTrace { logits, layers })
}

/// Sets each `log φ^(l)` to `ln(temperature_scale · median ‖v_i − v_j‖²)` of
/// the layer's embeddings under the current parameters, layer by layer.
/// Does nothing when `init_log_temperature` is set.
pub fn calibrate_temperatures(params: &mut ModelParams, cfg: &ModelConfig, input: &GraphInput, seed: u64) -> Result<()> {
    if cfg.init_log_temperature.is_some() {
        return Ok(());
    }
    for l in 0..cfg.boolean_layers {
        let tape = Tape::no_grad();
        let trace = forward(&tape, input, params, cfg, Mode::Eval, &[], seed)?;
        let m = median_sq_distance(&trace.layers[l].embeddings.value(), CALIBRATION_NODES);
        let phi = m * cfg.temperature_scale;
        if phi > 0.0 && phi.is_finite() {
            params.latent[l].log_phi = Tensor::scalar(phi.ln());
        }
    }
    Ok(())
}

const CALIBRATION_NODES: usize = 1000;

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per node.
pub fn predict(trace: &ForwardTrace<'_>) -> Vec<usize> {
    argmax_rows(&trace.logits.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(l: usize) -> ModelConfig {
        ModelConfig {
            boolean_layers: l,
            latent_dims: vec![4, 4, 4],
            hidden_dims: vec![6, 5, 4],
            num_classes: 3,
            gumbel: GumbelConfig { k: 2, seed: 0 },
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn tiny_input() -> GraphInput {
        let n = 9;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).chain([(0, 4), (2, 7)]).collect();
        GraphInput {
            features: Rc::new(Tensor::from_fn(n, 5, |i, j| ((i * 3 + j * 7) % 5) as f64 / 4.0)),
            adjacency: Rc::new(SparseAdjacency::from_undirected_edges(n, &edges).unwrap()),
        }
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let t = Tensor::from_rows(&[[0.5, 0.5], [0.0, 1.0], [2.0, -1.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1, 0]);
    }

    #[test]
    fn argmax_shift_invariant() {
        let t = Tensor::from_rows(&[[0.1, 0.7, 0.3]]).unwrap();
        assert_eq!(argmax_rows(&t), argmax_rows(&t.map(|v| v + 100.0)));
    }

    #[test]
    fn logits_shape_for_each_depth() {
        let input = tiny_input();
        for l in 0..=3 {
            let cfg = tiny_cfg(l);
            let params = ModelParams::init(&cfg, 5, 1).unwrap();
            let tape = Tape::new();
            let trace = forward(&tape, &input, &params, &cfg, Mode::Train, &[0, 1, 2], 5).unwrap();
            assert_eq!(trace.logits.shape(), (9, 3));
            assert_eq!(trace.layers.len(), l);
            for layer in &trace.layers {
                for i in 0..9 {
                    assert_eq!(layer.sampled.graph.degree(i), 2);
                }
            }
        }
    }

    #[test]
    fn too_many_boolean_layers_rejected() {
        let cfg = ModelConfig { boolean_layers: 4, num_classes: 2, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_cfg(2);
        let params = ModelParams::init(&cfg, 5, 77).unwrap();
        let text = params.to_checkpoint_string();
        let back = ModelParams::from_checkpoint_str(&text, &params).unwrap();
        for ((_, a), (_, b)) in params.named().into_iter().zip(back.named()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_shapes() {
        let a = ModelParams::init(&tiny_cfg(1), 5, 1).unwrap();
        let b = ModelParams::init(&tiny_cfg(2), 5, 1).unwrap();
        assert!(ModelParams::from_checkpoint_str(&a.to_checkpoint_string(), &b).is_err());
        assert!(ModelParams::from_checkpoint_str("bpgnn-params v9\n", &a).is_err());
    }
}

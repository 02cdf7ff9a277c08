//! Boolean product graph neural networks.
//!
//! Latent graph inference where each layer fuses the observed adjacency `A`
//! with a learned edge-probability matrix `P` through the probabilistic
//! Boolean product `A ◇ P`, samples a sparse graph from the result with the
//! Gumbel-top-k trick, and runs a GCN layer on the sampled graph.
//!
//! Module map:
//!
//! - [`tensor`], [`autodiff`], [`optim`]: dense matrices, a reverse-mode tape
//!   and Adam.
//! - [`graph`]: CSR adjacency, Boolean and probabilistic Boolean products,
//!   GCN normalisation, edge perturbation.
//! - [`latent`]: feature aggregation, the edge-probability kernel, the
//!   Boolean residual and the Gumbel-top-k sampler.
//! - [`model`]: the layer stack, forward traces and checkpoints.
//! - [`train`]: the composite loss, training loop, evaluation and homophily
//!   curves.
//! - [`data`]: the tab-separated dataset directory format and synthetic
//!   graphs.
//! - [`experiments`]: the experiment drivers behind the `bpgnn` binary.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod latent;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{ProbMatrix, SparseAdjacency};
pub use tensor::Tensor;

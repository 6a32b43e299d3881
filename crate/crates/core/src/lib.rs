//! Discrete-valued neural communication.
//!
//! Messages exchanged between the components of a structured model (edges of
//! a graph network, attention results in a transformer, inter-module
//! attention in a modular recurrent network) are split into `G` heads and
//! each head is replaced by its nearest entry of a single shared codebook of
//! `L` vectors. Gradients pass straight through the snap; the codebook is
//! trained by gradient descent on its own loss term.
//!
//! * [`numerics`]: tensors, the gradient tape, layers, optimizers.
//! * [`quantizer`]: segmentation, nearest-code lookup, auxiliary losses,
//!   k-means initialisation, Gumbel-Softmax variant, usage statistics.
//! * [`models`]: graph network, transformer block and modular recurrent
//!   network with a pluggable quantization site.
//! * [`theory`]: closed-form generalization bounds, the Monte Carlo check of
//!   the concentration step, and Gaussian-vector analyses.
//! * [`tasks`]: adding task, grid-world pushes, ranking metrics.
//! * [`harness`]: declarative experiment configs, runs, sweeps and output.

pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod quantizer;
pub mod seed;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}

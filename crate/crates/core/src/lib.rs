//! Algorithmic core of the `fstc` few-shot text-classification toolkit.
//!
//! Everything in this crate is pure computation over owned values: dense
//! f64 tensors with a tape-based reverse-mode autodiff engine (including
//! gradients of gradients), TF-IDF text featurization, an MLP encoder with
//! pretrain/fine-tune and episodic meta-learning loops (MAML and
//! prototypical networks), linear baselines, and an exact t-SNE projector.
//!
//! The crate is `no_std` (with `alloc`); file IO, checkpoints, reports and
//! the command-line interface live in the companion `fstc` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod meta;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod train;
pub mod tsne;

pub use error::{CoreError, Result};
pub use graph::{Graph, NodeId};
pub use params::ParamSet;
pub use tensor::Tensor;

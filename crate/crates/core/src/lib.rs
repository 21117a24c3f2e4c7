//! Graph reasoning as iterative clustering.
//!
//! A frozen GCN encoder is re-run on features gated by a condition-net,
//! whose input is built from text "thoughts" about each node's structural
//! and semantic neighbors. Alongside the pipeline sit the attention
//! construction that reproduces soft k-means assignments exactly, and the
//! alignment metrics used to track the iteration.
//!
//! Data-parallel kernels run on rayon behind the default `parallel`
//! feature; without it every helper in [`par`] runs sequentially with
//! identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cluster;
pub mod condnet;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod thoughts;
pub mod weights_io;

pub use error::{KcotError, Result};
pub use numerics::{DenseMatrix, SeededRng};

//! Kernel representation learning: contrastive and auto-encoder objectives
//! solved in reproducing kernel Hilbert spaces, with baselines, downstream
//! k-NN evaluation and an experiment harness.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod diagnostics;
pub mod downstream;
pub mod error;
pub mod harness;
pub mod kernel_ae;
pub mod kernels;
pub mod kpca;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod par;
pub mod simple_contrastive;
pub mod spectral_contrastive;

pub use error::{Error, Result};

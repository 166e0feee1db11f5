//! Dual-branch transformer fusion model for drug response prediction.
//!
//! The crate bundles a small reverse-mode autodiff engine, a SMILES parser,
//! multi-omics preprocessing with cold-start folds, the network itself,
//! training and evaluation, and Shapley/GSEA interpretation.

pub mod autodiff;
pub mod digest;
pub mod error;
pub mod interpret;
pub mod model;
pub mod omics;
pub mod smiles;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Bias mitigation for binary attribute prediction when the protected
//! attribute is unavailable at training time.
//!
//! The crate covers the whole laboratory: a small reverse-mode autodiff core
//! ([`tensor`], [`ops`], [`autodiff`]), synthetic biased datasets
//! ([`data`]), non-protected attribute selection ([`select`]), the cluster
//! and filter-redundancy objectives ([`losses`]), the training recipes
//! ([`pipeline`]) and fairness metrics ([`metrics`]).

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod select;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Batch normalization viewed as a constrained optimization on the raw
//! weights, with a data-dependent regularization rate `(wᵀRw)^½`.
//!
//! * [`linalg`]: dense matrices, covariance, Jacobi eigensolver, matrix square root.
//! * [`bn_theory`]: the single-unit identities (effective BN weight, Lagrangian,
//!   spectral shrinkage, noise-induced regularization).
//! * [`nn`]: a from-scratch `784 → 300 → 10` BN network trained with Adam.
//! * [`data`]: MNIST IDX files, amplitude scaling and SNR-controlled noise.
//! * [`experiments`]: amplitude and SNR sweeps with CSV reports.
//! * [`verify`]: the numerical property suite behind `bn-lens verify`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bn_theory;
pub mod data;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod nn;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymEigen, Vector};

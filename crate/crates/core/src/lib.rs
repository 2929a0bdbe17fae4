//! Exact ground manifolds of frustration-free spin-1/2 Hamiltonians with
//! two-spin interactions, and variational estimates for Hamiltonians that
//! are close to frustration-free.
//!
//! The pipeline: [`model`] builds and normalizes a Hamiltonian, [`reduction`]
//! contracts it by isometries down to a complete homogeneous residual,
//! [`groundspace`] parametrizes the residual kernel by the symmetric
//! subspace and restricts operators to it, and [`variational`] reuses the
//! same machinery as an ansatz. [`oracle`] is the brute-force reference.

pub mod error;
pub mod numerics;
pub mod model;
pub mod oracle;
pub mod reduction;
pub mod groundspace;
pub mod instances;
pub mod variational;
pub mod cli;

pub use error::{Error, Result};

//! Sparse matrix multiplication kernels and the performance models used to
//! analyze them.
//!
//! The crate is organized around a compressed-row sparse matrix
//! ([`matrix::CsrMatrix`]) and provides:
//!
//! - serial, parallel, and register-blocked SpMV plus SpMM ([`kernels`])
//! - Matrix Market ingestion and a sparse-collection fetch cache ([`io`])
//! - reverse Cuthill-McKee reordering and bandwidth metrics ([`ordering`])
//! - cacheline-density and bandwidth models ([`analysis`])
//! - a repeatable timing harness and host microbenchmarks ([`bench`])

pub mod analysis;
pub mod bench;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod ordering;

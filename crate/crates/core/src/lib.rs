//! Pairwise learning-to-rank of heterogeneous treatment effects with an
//! orthogonalized pseudo-label, plus CATE baselines, a synthetic benchmark
//! and exact population checks of the loss.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod io;
pub mod math;
pub mod nn;
pub mod nuisance;
pub mod orthocheck;
pub mod ranker;
pub mod rng;

pub use error::{Error, Result};

//! Stochastic SIS, SIRS and SIR-with-demography epidemics as Poisson-driven
//! jump processes, with their LLN, CLT, moderate- and large-deviation
//! limits and the extinction-time predictions that follow from them.

pub mod deterministic;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod clt;
pub mod optimize;
pub mod quasipotential;
pub mod action_ld;
pub mod action_md;
pub mod cli;
pub mod predict;

pub use error::{Error, Result};

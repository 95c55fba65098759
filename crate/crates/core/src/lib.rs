//! Transfer via distribution matching.
//!
//! Learns an undo map that carries states of a transformed target gridworld
//! back into the source domain, by matching the trajectory distribution of a
//! source policy against the pushforward of its composition with the undo map.
//! Matching uses a hinge-regularized Wasserstein dual with neural potentials
//! (or a variational f-divergence) and alternating stochastic gradient steps.

pub mod config;
pub mod costs;
pub mod divergences;
pub mod error;
pub mod exec;
pub mod gridworld;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod tvd;

pub use error::{Error, Result};

//! Neuroevolution of value-function networks.
//!
//! Topologies grow through speciated genetic search, connection weights are
//! refined by a covariance-matrix-adaptation evolution strategy when the
//! population stagnates, and every network is trained online with residual
//! temporal-difference updates before its fitness is measured.

pub mod cli;
pub mod cma;
pub mod config;
pub mod driver;
pub mod env;
pub mod genome;
pub mod network;
pub mod speciation;
pub mod td;
pub mod variation;

pub use config::RunConfig;
pub use genome::{Genome, InnovationRegistry};
pub use network::{decode, Network};

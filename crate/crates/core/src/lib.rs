//! Randomized gossip protocols with heavy-ball momentum.
//!
//! Average consensus on a connected network is the linear system `A x = 0`
//! with `A` the incidence matrix, and classic gossip protocols are
//! sketch-and-project methods on that system. This crate provides
//!
//! * [`topology`]: network generators, incidence matrices and connected
//!   components of edge subsets;
//! * [`solver`]: generic sketch-and-project / stochastic heavy ball steps on
//!   dense consistent systems;
//! * [`protocols`]: the same methods written as node-level gossip updates
//!   (mRK, mRBK, shift register, diagonal momentum, lazy mRK);
//! * [`theory`]: the spectrum of the expected projection matrix `W` and the
//!   rate constants it determines;
//! * [`harness`]: seeded multi-trial experiments with CSV output.

pub mod error;
pub mod harness;
pub mod protocols;
pub mod rng;
pub mod solver;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
pub use protocols::{
    iterations_to_tolerance, run_protocol, GossipState, ProtocolConfig, ProtocolKind, Trace,
};
pub use solver::{IterateState, LinearSystem, SketchDistribution, SketchSample};
pub use theory::{RateReport, Spectrum};
pub use topology::{Graph, Partition};

//! Differentially private federated learning over an analog multi-antenna
//! uplink: channel simulation, over-the-air aggregation, privacy accounting
//! and receive-beamforming design.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod beamform;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod privacy;
pub mod rng;
pub mod validation;

pub use error::{Error, Result};

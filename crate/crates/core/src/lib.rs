//! Traffic-signal control laboratory for a single four-approach intersection.
//!
//! The crate bundles a cellular microsimulator ([`sim`]), frame and feature
//! encoders ([`observation`]), a small network library with explicit
//! backpropagation ([`nn`]), experience replay ([`replay`]), the controllers
//! ([`agents`]) and the training/evaluation driver ([`harness`]).

pub mod agents;
pub mod error;
pub mod harness;
pub mod nn;
pub mod observation;
pub mod replay;
pub mod sim;

pub use error::{Error, Result};

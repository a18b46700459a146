//! Design and verification of spin chains for perfect quantum state transfer.
//!
//! A target spectrum is turned into chain parameters (fields, couplings or
//! site spacings) by Newton iteration on the eigenvalues, and the resulting
//! chain is checked by exact single- and two-excitation dynamics.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod iep;
pub mod linalg;
pub mod model;
pub mod spectrum;

pub use error::{Error, Result};

//! Simulation of a driven-dissipative oscillator with n-photon drive and
//! m-photon loss.

pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod fock;
pub mod linalg;
pub mod liouvillian;
pub mod meanfield;
pub mod metastability;
pub mod observables;
pub mod qam;

pub use error::{Error, Result};
pub use liouvillian::ModelParams;

//! Exact low-order moments of circuits built from local Haar-random gates.
//!
//! Each gate's moment operator is a small "P-gate" acting on local commutant
//! bases; the vectorized observable is an MPS that is pushed through the
//! gates and contracted against the vectorized initial state.

pub mod analysis;
pub mod commutant;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod mps;
pub mod oracle;
pub mod pauli;
pub mod pnet;
pub mod tensor;

pub use error::{Error, Result};

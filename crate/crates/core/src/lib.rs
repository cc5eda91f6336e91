//! Monte Carlo scheme for fully nonlinear nonlocal parabolic equations driven
//! by Lévy jumps.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod hjb;
pub mod jumpdiff;
pub mod levy;
pub mod linalg;
pub mod mcq;
pub mod quad;
pub mod scheme;
pub mod weights;

pub use error::{Error, Result};

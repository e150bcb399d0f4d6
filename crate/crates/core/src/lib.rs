#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod ensemble;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod lyapunov;
pub mod prufer;
pub mod quadrature;
pub mod spectral;
pub mod stats;
pub mod transfer;
pub mod transport;
pub mod weyl;

pub use error::{Error, Result};

//! Interference management for a satellite sharing spectrum with D2D pairs,
//! assisted by an active RIS carried on a UAV.

pub mod channel;
pub mod config;
pub mod dof;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod ris;
pub mod scheme;

pub use error::{Error, Result};

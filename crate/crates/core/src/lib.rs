//! Beam hopping and power allocation for LEO downlink TDOA positioning.

pub mod crlb;
pub mod error;
pub mod fbhca;
pub mod geometry;
pub mod linkbudget;
pub mod runner;
pub mod sdp;

pub use error::{Error, Result};
pub use nalgebra;

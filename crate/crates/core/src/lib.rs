//! Contraction analysis for dynamical systems under nonlinear inequality
//! constraints.

pub mod collisions;
pub mod constraints;
pub mod contraction;
pub mod error;
pub mod fd;
pub mod flow;
pub mod geodesics;
pub mod geometry;
pub mod linalg;

pub use error::{Error, Result};

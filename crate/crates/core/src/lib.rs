//! Affinity dimension of affine iterated function systems, randomly
//! perturbed self-affine attractors, and numerical checks of the bounds
//! that tie the two together.

pub mod attractor;
pub mod dimension;
pub mod error;
pub mod estimators;
pub mod ifs;
pub mod linalg;
pub mod randomness;

pub use error::{Error, Result};

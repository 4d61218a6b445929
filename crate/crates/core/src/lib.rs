//! Synthesis, robust-stability certification and simulation of a
//! two-input, two-output saturated plant: a soft limb bent by two
//! diagonal pairs of shape-memory-alloy actuators.
//!
//! Pipeline: [`model`] gives the static gain `G`; [`synthesis`] builds the
//! SVD-decoupling PI controller; [`antiwindup`] adds Hanus conditioning
//! and direction-preserving saturation; [`robustness`] certifies the
//! saturated loop; [`sim`] runs it in time.

pub mod antiwindup;
pub mod config;
pub mod error;
pub mod lti;
pub mod model;
pub mod robustness;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

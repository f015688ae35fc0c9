//! Simulation, calibration and control toolkit for modular tendon-driven arms.

pub mod canonical;
pub mod control;
pub mod elasticity;
pub mod error;
pub mod experiment;
pub mod kinematics;
pub mod model;
pub mod statics;

pub use error::{Error, Result};

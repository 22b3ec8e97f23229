//! Terrain-aided navigation with Fisher-information feedback control.
//!
//! A double-integrator vehicle measures its altitude above terrain. A particle
//! filter tracks the state, and a receding-horizon planner trades control
//! effort against the Fisher information the measurements are expected to
//! collect, steering over informative terrain.

pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod ocp;
pub mod particle_filter;
pub mod plant;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod terrain;

pub use error::{Error, Result};

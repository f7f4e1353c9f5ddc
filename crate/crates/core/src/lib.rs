//! Simulation and chaos diagnostics for a discretized age-structured vole
//! population map.

pub mod cli;
pub mod ensemble;
pub mod entropy;
pub mod error;
pub mod homoclinic;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{DerivedBounds, Model, ModelParams, StateVector, SurvivalDenominator};

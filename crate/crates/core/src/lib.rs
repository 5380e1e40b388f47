pub mod cli;
pub mod config;
pub mod dgp;
pub mod error;
pub mod estimands;
pub mod estimators;
pub mod inference;
pub mod ingest;
pub mod labor_model;
pub mod montecarlo;
pub mod numeric;
pub mod panel;
pub mod rng;
pub mod sensitivity;

pub use error::{Error, Result};

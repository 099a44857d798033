pub mod bayes;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod ewc;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod mgvae;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

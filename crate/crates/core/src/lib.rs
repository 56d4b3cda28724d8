pub mod artifacts;
pub mod autodiff;
pub mod baselines;
pub mod bounds;
pub mod causal;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod heads;
pub mod linear;
pub mod nn;
pub mod noise;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod sources;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod numcore;
pub mod pipeline;
pub mod prep;
pub mod recmodels;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};

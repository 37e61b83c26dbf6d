pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};

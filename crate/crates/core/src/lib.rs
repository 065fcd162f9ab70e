pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod dataset;
pub mod eval;
pub mod vae;
pub mod sdrm;
pub mod postprocess;
pub mod audit;
pub mod hpo;
pub mod manifest;
pub mod pipeline;

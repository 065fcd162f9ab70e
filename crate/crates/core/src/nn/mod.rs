//! Dense matrices, feed-forward networks, Adam and finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheck};
pub use matrix::DenseMatrix;
pub use mlp::{Activation, Layer, LayerGrads, MlpGrads, MlpNet, Trace};
pub use params::Parameters;

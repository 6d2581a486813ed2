//! Mixed-type tabular data synthesis with a causally regularized dual
//! diffusion model.
//!
//! The pipeline learns a DAG over the table's columns with NOTEARS, expands it
//! into a penalty mask over the encoded dimensions, and trains a denoiser that
//! jointly runs variance-exploding diffusion on numerical columns and
//! absorbing-state masked diffusion on categorical columns. Noise correlations
//! between causally unrelated columns are penalized with an adaptively
//! weighted regularizer.

pub mod autodiff;
pub mod causal;
pub mod diffusion;
pub mod evaluation;
pub mod fixtures;
pub mod linalg;
pub mod regularization;
pub(crate) mod serde_arrays;
pub mod tabular;
pub mod train;
pub mod util;

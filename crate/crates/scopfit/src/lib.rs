//! Shape-constrained additive model fitting.
//!
//! The crate fits exponential-family additive models in which some smooth
//! terms obey shape constraints (monotonicity, convexity/concavity), built
//! from SCOP-splines: B-spline bases whose coefficients are reparametrized
//! through a structured matrix with selected entries exponentiated so the
//! constraint holds for any real working coefficient vector.
//!
//! Beyond univariate smooths the model class covers tensor-product
//! interactions (unconstrained or monotone in the first covariate),
//! double/single monotone bivariate smooths, simple random effects,
//! varying-coefficient terms, scalar-on-function linear functional terms,
//! and AR(1) residual correlation for Gaussian identity-link models.
//! Smoothing parameters are selected by extended Fellner-Schall updates
//! minimizing GCV or UBRE.

pub mod ar1;
pub mod assembly;
pub mod data;
pub mod error;
pub mod family;
pub mod fit;
pub mod formula;
pub mod model;
pub mod plot;
pub mod sim;
pub mod smoothsel;
pub mod splines;
pub mod tensor;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Regression on high-dimensional, low-sample data with tools for comparing
//! coefficient vectors up to the nullspace of the design matrix.

pub mod dataset;
pub mod error;
pub mod io;
pub mod linalg;
pub mod modelselect;
pub mod nullspace;
pub mod preprocess;
pub mod regress;
pub mod snr;
pub mod spline;
pub mod synth;

pub use dataset::{Dataset, ResponseTransform};
pub use error::{Error, Result};
pub use linalg::{svd_factor, SvdFactors};
pub use preprocess::{fit_apply, fit_preprocess, PreprocessState, Scheme};
pub use regress::{CoefficientVector, Hyperparam, Method};

//! Hyperparameter selection by K-fold cross-validation and RMSE reporting
//! over named data splits.

mod cv;
mod eval;

pub use cv::{
    cross_validate, default_grid, fit_estimator, logspace, CvConfig, CvResult, Estimator, Grid,
    HyperValue, Rule,
};
pub use eval::{evaluate, EvalReport, EvalRow, SubsetRule, SubsetSpec};

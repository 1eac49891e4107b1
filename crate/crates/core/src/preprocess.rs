//! Column centering and z-scoring fitted on training data and replayed
//! verbatim on any other split.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Subtract column means.
    #[serde(alias = "center-only")]
    Center,
    /// Subtract column means and divide by the population std.
    #[serde(alias = "z-score")]
    Zscore,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Center => "center",
            Scheme::Zscore => "zscore",
        })
    }
}

/// Relative floor under which a column std counts as zero.
pub const STD_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    column_means: Vec<f64>,
    column_stds: Option<Vec<f64>>,
    y_mean: f64,
    scheme: Scheme,
}

impl PreprocessState {
    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    /// Present iff the scheme is z-score.
    pub fn column_stds(&self) -> Option<&[f64]> {
        self.column_stds.as_deref()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn p(&self) -> usize {
        self.column_means.len()
    }

    /// Map coefficients from the preprocessed space back to raw predictors.
    /// Returns `(beta_raw, intercept)` with `ŷ = X_raw β_raw + intercept`.
    pub fn coefficients_to_original(&self, beta: &DVector<f64>) -> (DVector<f64>, f64) {
        let raw = match &self.column_stds {
            Some(s) => DVector::from_fn(beta.len(), |j, _| beta[j] / s[j]),
            None => beta.clone(),
        };
        let shift: f64 = raw.iter().zip(&self.column_means).map(|(b, m)| b * m).sum();
        (raw, self.y_mean - shift)
    }

    /// Map raw-predictor coefficients into the preprocessed space.
    pub fn coefficients_from_original(&self, beta: &DVector<f64>) -> DVector<f64> {
        match &self.column_stds {
            Some(s) => DVector::from_fn(beta.len(), |j, _| beta[j] * s[j]),
            None => beta.clone(),
        }
    }
}

/// Population mean and std (divide by n) of every column.
pub(crate) fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        means.push(m);
        stds.push(var.sqrt());
    }
    (means, stds)
}

pub fn fit_preprocess(d: &Dataset, scheme: Scheme) -> Result<PreprocessState> {
    if d.transform().is_some() {
        return Err(Error::Input("dataset is already preprocessed".into()));
    }
    if d.n() < 2 {
        return Err(Error::Input(format!(
            "preprocessing needs n >= 2, got {}",
            d.n()
        )));
    }
    let (means, stds) = column_moments(d.x());
    let column_stds = match scheme {
        Scheme::Center => None,
        Scheme::Zscore => {
            let floor = STD_FLOOR_REL * stds.iter().cloned().fold(0.0, f64::max);
            if let Some((j, &s)) = stds.iter().enumerate().find(|(_, &s)| s <= floor) {
                return Err(Error::DegenerateColumn {
                    column: j,
                    std: s,
                    floor,
                });
            }
            Some(stds)
        }
    };
    Ok(PreprocessState {
        column_means: means,
        column_stds,
        y_mean: d.y().mean(),
        scheme,
    })
}

pub fn apply_preprocess(state: &PreprocessState, d: &Dataset) -> Result<Dataset> {
    if d.p() != state.p() {
        return Err(Error::Dimension(format!(
            "state fitted on {} columns, dataset has {}",
            state.p(),
            d.p()
        )));
    }
    if d.transform().is_some() {
        return Err(Error::Input("dataset is already preprocessed".into()));
    }
    let mut x = d.x().clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let m = state.column_means[j];
        match &state.column_stds {
            Some(s) => col.apply(|v| *v = (*v - m) / s[j]),
            None => col.add_scalar_mut(-m),
        }
    }
    let y = d.y().add_scalar(-state.y_mean);
    Ok(d.clone().with_transform_parts(x, y, Some(state.clone())))
}

/// Undo [`apply_preprocess`].
pub fn invert_preprocess(d: &Dataset) -> Result<Dataset> {
    let state = d
        .transform()
        .ok_or_else(|| Error::Input("dataset is not preprocessed".into()))?
        .clone();
    let mut x = d.x().clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let m = state.column_means[j];
        match &state.column_stds {
            Some(s) => col.apply(|v| *v = *v * s[j] + m),
            None => col.add_scalar_mut(m),
        }
    }
    let y = d.y().add_scalar(state.y_mean);
    Ok(d.clone().with_transform_parts(x, y, None))
}

/// Fit on `d` and apply to it in one step.
pub fn fit_apply(d: &Dataset, scheme: Scheme) -> Result<(PreprocessState, Dataset)> {
    let state = fit_preprocess(d, scheme)?;
    let out = apply_preprocess(&state, d)?;
    Ok((state, out))
}

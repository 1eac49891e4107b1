use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::PreprocessState;

/// Transform applied to the response before any centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseTransform {
    #[default]
    Identity,
    Log10,
}

impl ResponseTransform {
    pub fn forward(self, v: f64) -> f64 {
        match self {
            ResponseTransform::Identity => v,
            ResponseTransform::Log10 => v.log10(),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            ResponseTransform::Identity => v,
            ResponseTransform::Log10 => 10f64.powf(v),
        }
    }
}

/// Predictor matrix `X` (`n × p`), response `y`, and optional grid/labels.
///
/// `transform` records the column preprocessing already applied to `x`
/// and `y`; `response` records the response transform applied to `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    domain: Option<Vec<f64>>,
    sample_ids: Option<Vec<String>>,
    transform: Option<PreprocessState>,
    response: ResponseTransform,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Input(format!(
                "empty {}x{} predictor matrix",
                x.nrows(),
                x.ncols()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite predictor at row {}, column {}",
                i % x.nrows(),
                i / x.nrows()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite response at row {i}")));
        }
        Ok(Dataset {
            x,
            y,
            domain: None,
            sample_ids: None,
            transform: None,
            response: ResponseTransform::Identity,
        })
    }

    /// Predictors without a response (`y` is all zeros), e.g. for SNR profiling.
    pub fn unlabeled(x: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        Dataset::new(x, DVector::zeros(n))
    }

    pub fn with_domain(mut self, domain: Vec<f64>) -> Result<Self> {
        if domain.len() != self.p() {
            return Err(Error::Dimension(format!(
                "domain has {} points, X has {} columns",
                domain.len(),
                self.p()
            )));
        }
        check_monotone(&domain)?;
        self.domain = Some(domain);
        Ok(self)
    }

    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} sample ids for {} rows",
                ids.len(),
                self.n()
            )));
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    /// Apply `transform` to the response. Only valid on an untransformed,
    /// unpreprocessed dataset.
    pub fn with_response_transform(mut self, transform: ResponseTransform) -> Result<Self> {
        if self.transform.is_some() {
            return Err(Error::Input(
                "response transform must be applied before preprocessing".into(),
            ));
        }
        if self.response != ResponseTransform::Identity {
            return Err(Error::Input("response transform already applied".into()));
        }
        if transform == ResponseTransform::Log10 {
            if let Some(i) = self.y.iter().position(|&v| v <= 0.0) {
                return Err(Error::Input(format!(
                    "log10 response transform needs positive values; row {i} is {}",
                    self.y[i]
                )));
            }
        }
        self.y.apply(|v| *v = transform.forward(*v));
        self.response = transform;
        Ok(self)
    }

    /// Replace the response, keeping predictors and metadata.
    pub fn with_response(mut self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "response length {} != n = {}",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite response".into()));
        }
        self.y = y;
        Ok(self)
    }

    pub(crate) fn with_transform_parts(
        mut self,
        x: DMatrix<f64>,
        y: DVector<f64>,
        transform: Option<PreprocessState>,
    ) -> Self {
        self.x = x;
        self.y = y;
        self.transform = transform;
        self
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn domain(&self) -> Option<&[f64]> {
        self.domain.as_deref()
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    pub fn transform(&self) -> Option<&PreprocessState> {
        self.transform.as_ref()
    }

    pub fn response_transform(&self) -> ResponseTransform {
        self.response
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Dataset {
            x,
            y,
            domain: self.domain.clone(),
            sample_ids: self
                .sample_ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
            transform: self.transform.clone(),
            response: self.response,
        }
    }

    /// Response values in original units (inverse response transform, and
    /// the centering undone if the dataset is preprocessed).
    pub fn y_original(&self) -> DVector<f64> {
        let offset = self.transform.as_ref().map_or(0.0, |t| t.y_mean());
        self.y.map(|v| self.response.inverse(v + offset))
    }
}

pub(crate) fn check_monotone(domain: &[f64]) -> Result<()> {
    if domain.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("domain contains non-finite values".into()));
    }
    if domain.len() < 2 {
        return Ok(());
    }
    let increasing = domain.windows(2).all(|w| w[1] > w[0]);
    let decreasing = domain.windows(2).all(|w| w[1] < w[0]);
    if increasing || decreasing {
        Ok(())
    } else {
        Err(Error::Input("domain grid is not strictly monotone".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_response() {
        let err = Dataset::new(DMatrix::zeros(3, 2), DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn domain_must_be_monotone() {
        let d = Dataset::unlabeled(DMatrix::zeros(2, 3)).unwrap();
        assert!(d.clone().with_domain(vec![3.0, 2.0, 1.0]).is_ok());
        assert!(d.clone().with_domain(vec![1.0, 2.0, 2.0]).is_err());
        assert!(d.with_domain(vec![1.0, 3.0, 2.0]).is_err());
    }

    #[test]
    fn log10_response_round_trips() {
        let d = Dataset::new(DMatrix::zeros(2, 1), DVector::from_vec(vec![100.0, 1000.0]))
            .unwrap()
            .with_response_transform(ResponseTransform::Log10)
            .unwrap();
        assert_eq!(d.y().as_slice(), &[2.0, 3.0]);
        let back = d.y_original();
        assert!((back[0] - 100.0).abs() < 1e-10 && (back[1] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log10_rejects_nonpositive() {
        let d = Dataset::new(DMatrix::zeros(2, 1), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!(d.with_response_transform(ResponseTransform::Log10).is_err());
    }
}

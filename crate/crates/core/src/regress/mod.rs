//! Estimators: minimum-norm least squares, ridge, PCR, PLS and the
//! generalized (fused) lasso, plus prediction and the nullspace
//! orthogonality diagnostic.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{pinv_apply, svd_factor, SvdFactors};
use crate::preprocess::PreprocessState;

mod genlasso;
mod pls;

pub use genlasso::{
    fit_generalized_lasso, generalized_lasso_objective, ConvergenceReport, GeneralizedLassoFit,
    PenaltyKind, PenaltyMatrix, SolverConfig, TracePoint, WarmStart,
};
pub use pls::{fit_pls, fit_pls_path, PlsComponent, PlsState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    True,
    MinNorm,
    Ridge,
    Pcr,
    Pls,
    FusedLasso,
    Lasso,
    Custom,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::True => "true",
            Method::MinNorm => "min-norm",
            Method::Ridge => "ridge",
            Method::Pcr => "pcr",
            Method::Pls => "pls",
            Method::FusedLasso => "fused-lasso",
            Method::Lasso => "lasso",
            Method::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hyperparam {
    None,
    Lambda(f64),
    Components(usize),
    Penalized { lambda: f64, penalty: PenaltyKind },
}

impl fmt::Display for Hyperparam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyperparam::None => f.write_str("-"),
            Hyperparam::Lambda(l) => write!(f, "lambda={l}"),
            Hyperparam::Components(m) => write!(f, "components={m}"),
            Hyperparam::Penalized { lambda, penalty } => write!(f, "lambda={lambda};D={penalty}"),
        }
    }
}

/// A length-`p` coefficient vector tagged with how it was obtained and the
/// preprocessing of the data it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub beta: DVector<f64>,
    pub method: Method,
    pub hyperparam: Hyperparam,
    pub preprocessing: Option<PreprocessState>,
}

impl CoefficientVector {
    pub fn new(
        beta: DVector<f64>,
        method: Method,
        hyperparam: Hyperparam,
        preprocessing: Option<PreprocessState>,
    ) -> Result<Self> {
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{method} coefficients are not finite"
            )));
        }
        if let Some(s) = &preprocessing {
            if s.p() != beta.len() {
                return Err(Error::Dimension(format!(
                    "{} coefficients for preprocessing over {} columns",
                    beta.len(),
                    s.p()
                )));
            }
        }
        Ok(CoefficientVector {
            beta,
            method,
            hyperparam,
            preprocessing,
        })
    }

    /// Coefficients in the space of `d` (shares its preprocessing).
    pub fn custom(beta: DVector<f64>, d: &Dataset) -> Result<Self> {
        check_len(&beta, d)?;
        Self::new(
            beta,
            Method::Custom,
            Hyperparam::None,
            d.transform().cloned(),
        )
    }

    /// Raw-unit coefficients re-expressed for data preprocessed by `state`
    /// (`β ⊙ std` under z-scoring), so that predictions are unchanged.
    pub fn expressed_in(&self, state: &PreprocessState) -> Result<Self> {
        if self.preprocessing.is_some() {
            return Err(Error::Input(
                "coefficients are already in a preprocessed space".into(),
            ));
        }
        if state.p() != self.p() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} columns",
                self.p(),
                state.p()
            )));
        }
        Self::new(
            state.coefficients_from_original(&self.beta),
            self.method,
            self.hyperparam,
            Some(state.clone()),
        )
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Human-readable label, e.g. `pls(components=3)`.
    pub fn label(&self) -> String {
        match self.hyperparam {
            Hyperparam::None => self.method.to_string(),
            h => format!("{}({h})", self.method),
        }
    }
}

fn check_len(beta: &DVector<f64>, d: &Dataset) -> Result<()> {
    if beta.len() != d.p() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} predictors",
            beta.len(),
            d.p()
        )));
    }
    Ok(())
}

fn scheme_label(s: Option<&PreprocessState>) -> String {
    s.map_or_else(|| "raw".to_string(), |s| s.scheme().to_string())
}

/// Minimum-norm interpolating solution `X† y`.
pub fn fit_min_norm(d: &Dataset) -> Result<CoefficientVector> {
    let f = svd_factor(d.x(), None)?;
    fit_min_norm_factored(d, &f)
}

pub fn fit_min_norm_factored(d: &Dataset, f: &SvdFactors) -> Result<CoefficientVector> {
    if f.rank() == 0 {
        return Err(Error::Input("predictor matrix has numerical rank 0".into()));
    }
    let beta = pinv_apply(f, d.y())?;
    CoefficientVector::new(
        beta,
        Method::MinNorm,
        Hyperparam::None,
        d.transform().cloned(),
    )
}

/// Ridge regression, `(XᵀX + λI)⁻¹Xᵀy`, evaluated through the SVD.
pub fn fit_ridge(d: &Dataset, lambda: f64) -> Result<CoefficientVector> {
    let f = svd_factor(d.x(), None)?;
    fit_ridge_factored(d, &f, lambda)
}

pub fn fit_ridge_factored(d: &Dataset, f: &SvdFactors, lambda: f64) -> Result<CoefficientVector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Input(format!(
            "ridge lambda must be positive and finite, got {lambda}"
        )));
    }
    if f.nrows() != d.n() || f.ncols() != d.p() {
        return Err(Error::Dimension("factors do not match dataset".into()));
    }
    let beta = f.spectral_apply(d.y(), |s| s / (s * s + lambda));
    CoefficientVector::new(
        beta,
        Method::Ridge,
        Hyperparam::Lambda(lambda),
        d.transform().cloned(),
    )
}

/// Principal components regression on the leading `m` right singular vectors.
pub fn fit_pcr(d: &Dataset, m: usize) -> Result<CoefficientVector> {
    let f = svd_factor(d.x(), None)?;
    fit_pcr_factored(d, &f, m)
}

pub fn fit_pcr_factored(d: &Dataset, f: &SvdFactors, m: usize) -> Result<CoefficientVector> {
    if m == 0 || m > f.rank() {
        return Err(Error::Input(format!(
            "PCR needs 1 <= M <= rank(X) = {}, got {m}",
            f.rank()
        )));
    }
    let mut beta = DVector::zeros(d.p());
    for k in 0..m {
        let v = f.v1().column(k);
        let score = d.x() * v;
        let theta = score.dot(d.y()) / score.norm_squared();
        beta.axpy(theta, &v, 1.0);
    }
    CoefficientVector::new(
        beta,
        Method::Pcr,
        Hyperparam::Components(m),
        d.transform().cloned(),
    )
}

/// `ŷ = Xβ + ȳ`, in the response units the preprocessing started from.
///
/// Refuses coefficients fit under a different preprocessing scheme unless
/// `allow_mismatch` is set.
pub fn predict(
    beta: &CoefficientVector,
    d: &Dataset,
    allow_mismatch: bool,
) -> Result<DVector<f64>> {
    check_len(&beta.beta, d)?;
    let coef_scheme = beta.preprocessing.as_ref().map(|s| s.scheme());
    let data_scheme = d.transform().map(|s| s.scheme());
    if coef_scheme != data_scheme && !allow_mismatch {
        return Err(Error::Provenance {
            coefficients: scheme_label(beta.preprocessing.as_ref()),
            data: scheme_label(d.transform()),
        });
    }
    let offset = d.transform().map_or(0.0, |s| s.y_mean());
    Ok((d.x() * &beta.beta).add_scalar(offset))
}

/// `‖V0ᵀβ‖ / ‖β‖`: the fraction of `β` lying in the nullspace of `X`.
pub fn orthogonality_defect(beta: &DVector<f64>, f: &SvdFactors) -> Result<f64> {
    if beta.len() != f.ncols() {
        return Err(Error::Dimension(format!(
            "{} coefficients, factors have {} columns",
            beta.len(),
            f.ncols()
        )));
    }
    let denom = beta.norm().max(f64::MIN_POSITIVE);
    if f.v0().ncols() == 0 {
        return Ok(0.0);
    }
    Ok(f.v0().tr_mul(beta).norm() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{fit_apply, Scheme};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn min_norm_identity() {
        let d = Dataset::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![4.0, -1.0, 2.0]),
        )
        .unwrap();
        let b = fit_min_norm(&d).unwrap();
        assert_abs_diff_eq!(b.beta, d.y().clone(), epsilon = 1e-14);
    }

    #[test]
    fn min_norm_interpolates_wide() {
        let d = random(5, 12, 1);
        let b = fit_min_norm(&d).unwrap();
        assert!((d.x() * &b.beta - d.y()).norm() <= 1e-8 * d.y().norm());
    }

    #[test]
    fn min_norm_rank_zero() {
        let d = Dataset::new(DMatrix::zeros(2, 3), DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(fit_min_norm(&d), Err(Error::Input(_))));
    }

    #[test]
    fn min_norm_is_ridge_limit() {
        let d = random(5, 12, 2);
        let f = svd_factor(d.x(), None).unwrap();
        let b0 = fit_min_norm(&d).unwrap().beta;
        let br = fit_ridge_factored(&d, &f, 1e-12).unwrap().beta;
        assert!((&br - &b0).norm() <= 1e-6 * b0.norm());
    }

    #[test]
    fn ridge_hand_case() {
        let d = Dataset::new(DMatrix::identity(2, 2), DVector::from_vec(vec![2.0, 4.0])).unwrap();
        let b = fit_ridge(&d, 1.0).unwrap();
        assert_abs_diff_eq!(b.beta, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn ridge_matches_dense_closed_form() {
        let d = random(4, 7, 3);
        let lambda = 0.37;
        let xtx = d.x().transpose() * d.x() + DMatrix::<f64>::identity(7, 7) * lambda;
        let dense = xtx.lu().solve(&(d.x().transpose() * d.y())).unwrap();
        let b = fit_ridge(&d, lambda).unwrap();
        assert!((b.beta - dense).amax() <= 1e-9);
    }

    #[test]
    fn ridge_shrinks_to_zero() {
        let d = random(4, 9, 4);
        let f = svd_factor(d.x(), None).unwrap();
        let b0 = fit_min_norm(&d).unwrap().beta;
        let b = fit_ridge_factored(&d, &f, 1e12 * f.sigma_max().powi(2)).unwrap();
        assert!(b.beta.norm() <= 1e-6 * b0.norm());
    }

    #[test]
    fn ridge_rejects_nonpositive_lambda() {
        let d = random(3, 4, 5);
        assert!(fit_ridge(&d, 0.0).is_err());
        assert!(fit_ridge(&d, -1.0).is_err());
    }

    #[test]
    fn pcr_full_rank_matches_min_norm_predictions() {
        let d = random(5, 9, 6);
        let f = svd_factor(d.x(), None).unwrap();
        let full = fit_pcr_factored(&d, &f, f.rank()).unwrap();
        let mn = fit_min_norm(&d).unwrap();
        assert!((d.x() * full.beta - d.x() * mn.beta).amax() < 1e-8);
    }

    #[test]
    fn pcr_rank_one_recovers_min_norm() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![0.3, 0.1, -0.7, 0.2, 0.9]);
        let x = &u * v.transpose();
        let d = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let pcr = fit_pcr(&d, 1).unwrap();
        let mn = fit_min_norm(&d).unwrap();
        assert!((pcr.beta - mn.beta).amax() < 1e-12);
    }

    #[test]
    fn pcr_matches_eigendecomposition_oracle() {
        let d = random(5, 9, 7);
        let xtx = d.x().transpose() * d.x();
        let eig = xtx.symmetric_eigen();
        let mut order: Vec<usize> = (0..9).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let mut oracle = DVector::zeros(9);
        for &k in order.iter().take(2) {
            let v = eig.eigenvectors.column(k);
            let z = d.x() * v;
            oracle += v * (z.dot(d.y()) / z.norm_squared());
        }
        let b = fit_pcr(&d, 2).unwrap();
        assert!((b.beta - oracle).amax() < 1e-10);
    }

    #[test]
    fn pcr_out_of_range() {
        let d = random(3, 6, 8);
        assert!(fit_pcr(&d, 0).is_err());
        assert!(fit_pcr(&d, 4).is_err());
    }

    #[test]
    fn predict_zero_beta_gives_mean() {
        let d = random(6, 4, 9);
        let (_, t) = fit_apply(&d, Scheme::Center).unwrap();
        let zero = CoefficientVector::custom(DVector::zeros(4), &t).unwrap();
        let yhat = predict(&zero, &t, false).unwrap();
        let mean = d.y().mean();
        assert!(yhat.iter().all(|v| (v - mean).abs() < 1e-14));
    }

    #[test]
    fn predict_min_norm_interpolates_training() {
        let d = random(6, 20, 10);
        let (_, t) = fit_apply(&d, Scheme::Zscore).unwrap();
        let b = fit_min_norm(&t).unwrap();
        let yhat = predict(&b, &t, false).unwrap();
        assert!((&yhat - d.y()).amax() < 1e-8, "{}", (yhat - d.y()).amax());
    }

    #[test]
    fn predict_ignores_nullspace_additions() {
        let d = random(5, 15, 11);
        let (_, t) = fit_apply(&d, Scheme::Center).unwrap();
        let f = svd_factor(t.x(), None).unwrap();
        let b = fit_ridge_factored(&t, &f, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = DVector::from_fn(f.v0().ncols(), |_, _| StandardNormal.sample(&mut rng));
        let mut moved = b.clone();
        moved.beta += f.v0() * w;
        let a = predict(&b, &t, false).unwrap();
        let c = predict(&moved, &t, false).unwrap();
        assert!((&a - &c).norm() <= 1e-9 * a.norm());
    }

    #[test]
    fn predict_refuses_scheme_mismatch() {
        let d = random(5, 6, 12);
        let (_, centered) = fit_apply(&d, Scheme::Center).unwrap();
        let (_, z) = fit_apply(&d, Scheme::Zscore).unwrap();
        let b = fit_ridge(&centered, 1.0).unwrap();
        assert!(matches!(
            predict(&b, &z, false),
            Err(Error::Provenance { .. })
        ));
        assert!(predict(&b, &z, true).is_ok());
        assert!(matches!(
            predict(&b, &d, false),
            Err(Error::Provenance { .. })
        ));
    }

    #[test]
    fn defect_of_ridge_and_pure_nullspace() {
        let d = random(4, 10, 13);
        let f = svd_factor(d.x(), None).unwrap();
        let b = fit_ridge_factored(&d, &f, 0.5).unwrap();
        assert!(orthogonality_defect(&b.beta, &f).unwrap() <= 1e-8);
        let w = f.v0().column(2).into_owned() * 3.0 + f.v0().column(0) * -1.0;
        assert_abs_diff_eq!(orthogonality_defect(&w, &f).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(orthogonality_defect(&DVector::zeros(10), &f).unwrap(), 0.0);
    }
}

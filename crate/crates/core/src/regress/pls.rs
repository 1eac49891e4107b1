use nalgebra::{DMatrix, DVector};

use super::{CoefficientVector, Hyperparam, Method};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::svd_factor;

/// Vanishing threshold for `‖z_m‖`, relative to `σ_max² · ‖y‖`.
const Z_VANISH_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PlsComponent {
    /// Regression input `z_m = X_{m-1} X_{m-1}ᵀ y`.
    pub z: DVector<f64>,
    /// Univariate least-squares coefficient of `y` on `z_m`.
    pub theta: f64,
    /// Frobenius norm of the deflated matrix `X_m`.
    pub deflated_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlsState {
    pub components: Vec<PlsComponent>,
}

/// Recursive PLS: each step regresses `y` on `z_m = X_{m-1}X_{m-1}ᵀy` and
/// then orthogonalizes the columns of `X_{m-1}` against `z_m`.
///
/// Returns the coefficient vector after every step `1..=max_m`. The
/// coefficients are accumulated as `Σ θ_m w_m` with `X w_m = z_m` and every
/// `w_m` built from rows of `X`, so they stay in the row space.
pub fn fit_pls_path(d: &Dataset, max_m: usize) -> Result<(Vec<DVector<f64>>, PlsState)> {
    let x = d.x();
    let y = d.y();
    let ynorm = y.norm();
    if ynorm == 0.0 {
        return Err(Error::Input("PLS needs a nonzero response".into()));
    }
    let f = svd_factor(x, None)?;
    if max_m == 0 || max_m > f.rank() {
        return Err(Error::Input(format!(
            "PLS needs 1 <= M <= rank(X) = {}, got {max_m}",
            f.rank()
        )));
    }
    let threshold = Z_VANISH_REL * f.sigma_max().powi(2) * ynorm;

    let mut xm: DMatrix<f64> = x.clone();
    let mut beta = DVector::zeros(d.p());
    let mut betas = Vec::with_capacity(max_m);
    let mut basis: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::with_capacity(max_m);
    let mut state = PlsState::default();

    for m in 0..max_m {
        let r = xm.tr_mul(y);
        let z = &xm * &r;
        let zz = z.norm_squared();
        if z.norm() < threshold {
            return Err(Error::PlsEarlyTermination {
                achieved: m,
                requested: max_m,
            });
        }
        let xr = x * &r;
        let mut w = r;
        for (zk, wk, zkzk) in &basis {
            w.axpy(-zk.dot(&xr) / zkzk, wk, 1.0);
        }
        let theta = z.dot(y) / zz;
        beta.axpy(theta, &w, 1.0);
        betas.push(beta.clone());

        let proj = xm.tr_mul(&z) / zz;
        xm.ger(-1.0, &z, &proj, 1.0);
        state.components.push(PlsComponent {
            z: z.clone(),
            theta,
            deflated_norm: xm.norm(),
        });
        basis.push((z, w, zz));
    }
    Ok((betas, state))
}

pub fn fit_pls(d: &Dataset, m: usize) -> Result<(CoefficientVector, PlsState)> {
    let (mut betas, state) = fit_pls_path(d, m)?;
    let beta = betas.pop().expect("at least one component");
    let coef = CoefficientVector::new(
        beta,
        Method::Pls,
        Hyperparam::Components(m),
        d.transform().cloned(),
    )?;
    Ok((coef, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{fit_apply, Scheme};
    use crate::regress::{fit_min_norm, orthogonality_defect};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn centered(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        fit_apply(&Dataset::new(x, y).unwrap(), Scheme::Center)
            .unwrap()
            .1
    }

    #[test]
    fn one_component_direct_recursion() {
        let d = centered(6, 11, 1);
        let (x, y) = (d.x(), d.y());
        let xty = x.tr_mul(y);
        let z1 = x * &xty;
        let theta = z1.dot(y) / z1.dot(&z1);
        let expected = xty * theta;
        let (b, state) = fit_pls(&d, 1).unwrap();
        assert!((b.beta - &expected).amax() <= 1e-12 * expected.amax());
        assert!((state.components[0].theta - theta).abs() <= 1e-12 * theta.abs());
    }

    #[test]
    fn full_rank_reproduces_min_norm_predictions() {
        let d = centered(6, 20, 2);
        let rank = svd_factor(d.x(), None).unwrap().rank();
        let (b, _) = fit_pls(&d, rank).unwrap();
        let mn = fit_min_norm(&d).unwrap();
        assert!((d.x() * b.beta - d.x() * mn.beta).amax() <= 1e-6);
    }

    #[test]
    fn coefficients_reproduce_recursion_predictions() {
        let d = centered(7, 15, 3);
        let (betas, state) = fit_pls_path(&d, 4).unwrap();
        let mut yhat = DVector::zeros(7);
        for (m, c) in state.components.iter().enumerate() {
            yhat.axpy(c.theta, &c.z, 1.0);
            let pred = d.x() * &betas[m];
            assert!((&pred - &yhat).amax() <= 1e-9 * yhat.amax());
        }
    }

    #[test]
    fn regression_inputs_are_orthogonal() {
        let d = centered(8, 25, 4);
        let (_, state) = fit_pls_path(&d, 6).unwrap();
        for i in 0..6 {
            for j in 0..i {
                let (zi, zj) = (&state.components[i].z, &state.components[j].z);
                assert!(zi.dot(zj).abs() <= 1e-8 * zi.norm() * zj.norm());
            }
        }
    }

    #[test]
    fn orthogonal_to_nullspace_for_all_m() {
        for seed in 0..5 {
            let d = centered(6, 20, 10 + seed);
            let f = svd_factor(d.x(), None).unwrap();
            let (betas, _) = fit_pls_path(&d, f.rank()).unwrap();
            for b in &betas {
                assert!(orthogonality_defect(b, &f).unwrap() <= 1e-8);
            }
        }
    }

    #[test]
    fn zero_response_and_bad_m() {
        let mut d = centered(4, 6, 5);
        assert!(fit_pls(&d, 0).is_err());
        assert!(fit_pls(&d, 5).is_err());
        d = d.with_response(DVector::zeros(4)).unwrap();
        assert!(fit_pls(&d, 1).is_err());
    }

    #[test]
    fn early_termination_reports_components() {
        // y lies along a single left singular direction: one component exhausts it.
        let u = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        let u2 = DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let v2 = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let x = &u * v.transpose() * 3.0 + &u2 * v2.transpose();
        let d = Dataset::new(x, u.clone()).unwrap();
        match fit_pls(&d, 2) {
            Err(Error::PlsEarlyTermination {
                achieved,
                requested,
            }) => {
                assert_eq!((achieved, requested), (1, 2));
            }
            other => panic!("expected early termination, got {other:?}"),
        }
    }
}

//! Comparing two coefficient vectors up to the nullspace of `X`.
//!
//! Given `β_Δ = β_A − β_B`, `v*` is the nullspace vector that brings `β_A`
//! closest to `β_B` without changing predictions, and `v_γ` relaxes that
//! constraint into a penalty `γ‖Xv‖²`.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{svd_factor, SvdFactors};
use crate::regress::CoefficientVector;

/// `v* = −V0 V0ᵀ β_Δ`.
pub fn project_nullspace(f: &SvdFactors, beta_delta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(f, beta_delta)?;
    Ok(-f.nullspace_part(beta_delta))
}

/// `v_γ = −(γXᵀX + I)⁻¹β_Δ`, evaluated as
/// `−β_Δ + V1 diag(γσ²/(γσ²+1)) V1ᵀ β_Δ`.
pub fn relaxed_nullspace(
    f: &SvdFactors,
    beta_delta: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    check_dim(f, beta_delta)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Input(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    let coords = f.v1().tr_mul(beta_delta);
    let weighted = DVector::from_fn(coords.len(), |k, _| {
        let gs = gamma * f.singular_values()[k].powi(2);
        coords[k] * (gs / (gs + 1.0))
    });
    Ok(f.v1() * weighted - beta_delta)
}

fn check_dim(f: &SvdFactors, b: &DVector<f64>) -> Result<()> {
    if b.len() != f.ncols() {
        return Err(Error::Dimension(format!(
            "coefficient difference has length {}, X has {} columns",
            b.len(),
            f.ncols()
        )));
    }
    Ok(())
}

/// Root-mean-square error normalized by the response range:
/// `‖ŷ − y‖ / ((max y − min y) √n)`.
pub fn nrmse(y_hat: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let n = y.len();
    if y_hat.len() != n {
        return Err(Error::Dimension(format!(
            "{} predictions for {n} responses",
            y_hat.len()
        )));
    }
    if n < 2 {
        return Err(Error::Input("NRMSE needs at least two responses".into()));
    }
    let s = y.max() - y.min();
    if !(s > 0.0) {
        return Err(Error::Input(
            "NRMSE is undefined for a constant response".into(),
        ));
    }
    Ok((y_hat - y).norm() / (s * (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma {
    Finite(f64),
    /// Exact projection `v*`.
    Infinite,
}

impl Gamma {
    pub fn value(&self) -> f64 {
        match self {
            Gamma::Finite(g) => *g,
            Gamma::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Finite(g) => write!(f, "{g}"),
            Gamma::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceComparison {
    pub beta_a: CoefficientVector,
    pub beta_b: CoefficientVector,
    pub beta_delta: DVector<f64>,
    pub gamma: Gamma,
    pub v: DVector<f64>,
    pub nrmse_before: f64,
    pub nrmse_after: f64,
    /// Allowed NRMSE change, when `γ` was selected against one.
    pub constraint_c: Option<f64>,
    /// Neighboring `γ` that violates the constraint, when the search found one.
    pub infeasible_neighbor: Option<f64>,
}

impl NullspaceComparison {
    /// `β_A + v`.
    pub fn modified(&self) -> DVector<f64> {
        &self.beta_a.beta + &self.v
    }

    pub fn nrmse_change(&self) -> f64 {
        (self.nrmse_after - self.nrmse_before).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub grid_points: usize,
    /// Grid bounds in units of `1/σ_max²`.
    pub grid_min: f64,
    pub grid_max: f64,
    pub bisection_steps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_points: 200,
            grid_min: 1e-8,
            grid_max: 1e12,
            bisection_steps: 30,
        }
    }
}

struct Problem<'a> {
    f: &'a SvdFactors,
    eval: &'a Dataset,
    a: &'a CoefficientVector,
    b: &'a CoefficientVector,
    delta: DVector<f64>,
    before: f64,
}

impl<'a> Problem<'a> {
    fn new(
        f: &'a SvdFactors,
        eval: &'a Dataset,
        a: &'a CoefficientVector,
        b: &'a CoefficientVector,
    ) -> Result<Self> {
        for (name, beta) in [("beta_a", a), ("beta_b", b)] {
            if beta.p() != eval.p() || beta.p() != f.ncols() {
                return Err(Error::Dimension(format!(
                    "{name} has {} coefficients, data has {} predictors",
                    beta.p(),
                    eval.p()
                )));
            }
            let coef = beta.preprocessing.as_ref().map(|s| s.scheme());
            let data = eval.transform().map(|s| s.scheme());
            if coef != data {
                return Err(Error::Provenance {
                    coefficients: label(coef),
                    data: label(data),
                });
            }
        }
        let before = nrmse(&(eval.x() * &a.beta), eval.y())?;
        Ok(Problem {
            f,
            eval,
            a,
            b,
            delta: &a.beta - &b.beta,
            before,
        })
    }

    fn after(&self, v: &DVector<f64>) -> Result<f64> {
        nrmse(&(self.eval.x() * (&self.a.beta + v)), self.eval.y())
    }

    fn at(&self, gamma: Gamma) -> Result<(DVector<f64>, f64)> {
        let v = match gamma {
            Gamma::Finite(g) => relaxed_nullspace(self.f, &self.delta, g)?,
            Gamma::Infinite => project_nullspace(self.f, &self.delta)?,
        };
        let after = self.after(&v)?;
        Ok((v, after))
    }

    fn finish(
        self,
        gamma: Gamma,
        v: DVector<f64>,
        after: f64,
        c: Option<f64>,
        infeasible_neighbor: Option<f64>,
    ) -> NullspaceComparison {
        NullspaceComparison {
            beta_a: self.a.clone(),
            beta_b: self.b.clone(),
            beta_delta: self.delta,
            gamma,
            v,
            nrmse_before: self.before,
            nrmse_after: after,
            constraint_c: c,
            infeasible_neighbor,
        }
    }
}

fn label(s: Option<crate::preprocess::Scheme>) -> String {
    s.map_or_else(|| "none".to_string(), |s| s.to_string())
}

/// Compare `β_A` and `β_B` at a fixed `γ`.
pub fn compare_at_gamma(
    d: &Dataset,
    beta_a: &CoefficientVector,
    beta_b: &CoefficientVector,
    gamma: Gamma,
) -> Result<NullspaceComparison> {
    let f = svd_factor(d.x(), None)?;
    compare_at_gamma_factored(d, &f, beta_a, beta_b, gamma)
}

pub fn compare_at_gamma_factored(
    d: &Dataset,
    f: &SvdFactors,
    beta_a: &CoefficientVector,
    beta_b: &CoefficientVector,
    gamma: Gamma,
) -> Result<NullspaceComparison> {
    let prob = Problem::new(f, d, beta_a, beta_b)?;
    let (v, after) = prob.at(gamma)?;
    Ok(prob.finish(gamma, v, after, None, None))
}

/// Choose `γ` so that moving `β_A` toward `β_B` changes the NRMSE on the
/// training data by at most `c`.
///
/// The NRMSE change vanishes as `γ → ∞` (then `v` lies in the nullspace),
/// so the feasible set is unbounded above. The search returns the smallest
/// `γ` on the boundary of the feasible region that extends to the top of
/// the grid; this is the `γ` at which the NRMSE change reaches `c`.
pub fn select_gamma(
    d: &Dataset,
    beta_a: &CoefficientVector,
    beta_b: &CoefficientVector,
    c: f64,
    cfg: &SearchConfig,
) -> Result<NullspaceComparison> {
    let f = svd_factor(d.x(), None)?;
    select_gamma_factored(d, &f, d, beta_a, beta_b, c, cfg)
}

/// Like [`select_gamma`], but checks the NRMSE constraint on `eval` (for
/// example a held-out split preprocessed with the training state). The
/// nullspace is always that of the training matrix factored in `f`.
pub fn select_gamma_factored(
    train: &Dataset,
    f: &SvdFactors,
    eval: &Dataset,
    beta_a: &CoefficientVector,
    beta_b: &CoefficientVector,
    c: f64,
    cfg: &SearchConfig,
) -> Result<NullspaceComparison> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Input(format!(
            "NRMSE tolerance c must be positive, got {c}"
        )));
    }
    if cfg.grid_points < 2 || !(cfg.grid_min > 0.0) || !(cfg.grid_max > cfg.grid_min) {
        return Err(Error::Config(format!("invalid gamma search grid {cfg:?}")));
    }
    if f.nrows() != train.n() || f.ncols() != train.p() || eval.p() != train.p() {
        return Err(Error::Dimension(
            "factors, training and evaluation data disagree".into(),
        ));
    }
    let prob = Problem::new(f, eval, beta_a, beta_b)?;
    if prob.delta.iter().all(|&v| v == 0.0) {
        let v = DVector::zeros(prob.delta.len());
        let after = prob.before;
        return Ok(prob.finish(Gamma::Infinite, v, after, Some(c), None));
    }

    let unit = 1.0 / f.sigma_max().powi(2);
    let (lo, hi) = (cfg.grid_min.ln(), cfg.grid_max.ln());
    let step = (hi - lo) / (cfg.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|k| (lo + step * k as f64).exp() * unit)
        .collect();
    let feasible_at = |g: f64| -> Result<(bool, DVector<f64>, f64)> {
        let (v, after) = prob.at(Gamma::Finite(g))?;
        Ok(((after - prob.before).abs() <= c, v, after))
    };
    let flags = grid
        .par_iter()
        .map(|&g| feasible_at(g).map(|r| r.0))
        .collect::<Result<Vec<bool>>>()?;

    let top = cfg.grid_points - 1;
    if !flags[top] {
        let (_, _, after) = feasible_at(grid[top])?;
        return Err(Error::NoFeasibleRelaxation {
            c,
            gamma_max: grid[top],
            delta: (after - prob.before).abs(),
        });
    }
    let k0 = flags.iter().rposition(|&ok| !ok).map_or(0, |k| k + 1);

    if k0 == 0 {
        let (ok, v, after) = feasible_at(0.0)?;
        if ok {
            return Ok(prob.finish(Gamma::Finite(0.0), v, after, Some(c), None));
        }
        let (_, v, after) = feasible_at(grid[0])?;
        return Ok(prob.finish(Gamma::Finite(grid[0]), v, after, Some(c), Some(0.0)));
    }

    let (mut bad, mut good) = (grid[k0 - 1].ln(), grid[k0].ln());
    let (_, mut v, mut after) = feasible_at(grid[k0])?;
    let mut gamma = grid[k0];
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (bad + good);
        let (ok, vm, am) = feasible_at(mid.exp())?;
        if ok {
            good = mid;
            gamma = mid.exp();
            v = vm;
            after = am;
        } else {
            bad = mid;
        }
    }
    Ok(prob.finish(Gamma::Finite(gamma), v, after, Some(c), Some(bad.exp())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{fit_apply, Scheme};
    use crate::regress::{fit_min_norm, fit_ridge, Hyperparam, Method};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn one_by_two_projection() {
        let f = svd_factor(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), None).unwrap();
        let v = project_nullspace(&f, &DVector::from_vec(vec![1.5, -2.5])).unwrap();
        assert!((v[0]).abs() < 1e-15 && (v[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn row_space_and_nullspace_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(4, 9, &mut rng);
        let f = svd_factor(&x, None).unwrap();
        let w = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let row = x.tr_mul(&w);
        assert!(project_nullspace(&f, &row).unwrap().norm() < 1e-12 * row.norm());
        let null = f.v0() * DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
        let v = project_nullspace(&f, &null).unwrap();
        assert!((&v + &null).norm() < 1e-12 * null.norm());
    }

    #[test]
    fn projection_is_idempotent_and_annihilated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(5, 13, &mut rng);
        let f = svd_factor(&x, None).unwrap();
        let b = DVector::from_fn(13, |_, _| StandardNormal.sample(&mut rng));
        let v = project_nullspace(&f, &b).unwrap();
        assert!((&x * &v).norm() <= 1e-8 * x.norm() * v.norm());
        let again = project_nullspace(&f, &-&v).unwrap();
        assert!((again - &v).norm() <= 1e-12 * v.norm());
    }

    #[test]
    fn relaxed_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(5, 11, &mut rng);
        let f = svd_factor(&x, None).unwrap();
        let b = DVector::from_fn(11, |_, _| StandardNormal.sample(&mut rng));
        assert_eq!(relaxed_nullspace(&f, &b, 0.0).unwrap(), -&b);
        let big = relaxed_nullspace(&f, &b, 1e14 / f.sigma_max().powi(2)).unwrap();
        let star = project_nullspace(&f, &b).unwrap();
        assert!((big - star).norm() <= 1e-6 * b.norm());
    }

    #[test]
    fn relaxed_scalar_case() {
        let f = svd_factor(&DMatrix::from_element(1, 1, 2.0), None).unwrap();
        let v = relaxed_nullspace(&f, &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert!((v[0] + 0.2).abs() < 1e-15);
        assert!(relaxed_nullspace(&f, &DVector::from_element(1, 1.0), -1.0).is_err());
    }

    #[test]
    fn relaxed_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(3, 6, &mut rng);
        let f = svd_factor(&x, None).unwrap();
        let b = DVector::from_fn(6, |_, _| StandardNormal.sample(&mut rng));
        let gamma = 0.7;
        let m = x.tr_mul(&x) * gamma + DMatrix::identity(6, 6);
        let dense = -m.lu().solve(&b).unwrap();
        assert!((relaxed_nullspace(&f, &b, gamma).unwrap() - dense).amax() < 1e-12);
    }

    #[test]
    fn nrmse_values() {
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        let yh = DVector::from_vec(vec![0.0, 1.0, 3.0]);
        assert!((nrmse(&yh, &y).unwrap() - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-15);
        let (a, b) = (3.5, -2.0);
        let l = nrmse(&yh.map(|v| a * v + b), &y.map(|v| a * v + b)).unwrap();
        assert!((l - nrmse(&yh, &y).unwrap()).abs() < 1e-14);
        assert!(nrmse(&y, &DVector::from_element(3, 1.0)).is_err());
        assert!(nrmse(&DVector::zeros(1), &DVector::zeros(1)).is_err());
    }

    fn setup(seed: u64) -> (Dataset, CoefficientVector, CoefficientVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(8, 30, &mut rng);
        let y = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        let (_, d) = fit_apply(&Dataset::new(x, y).unwrap(), Scheme::Center).unwrap();
        let a = fit_ridge(&d, 1.0).unwrap();
        let b = CoefficientVector::new(
            DVector::from_element(30, 0.05),
            Method::True,
            Hyperparam::None,
            d.transform().cloned(),
        )
        .unwrap();
        (d, a, b)
    }

    #[test]
    fn identical_vectors_give_infinite_gamma() {
        let (d, a, _) = setup(5);
        let cmp = select_gamma(&d, &a, &a, 1e-3, &SearchConfig::default()).unwrap();
        assert_eq!(cmp.gamma, Gamma::Infinite);
        assert_eq!(cmp.v.norm(), 0.0);
    }

    #[test]
    fn selected_gamma_is_feasible_with_infeasible_neighbor() {
        let (d, a, b) = setup(6);
        let c = 1e-3;
        let cmp = select_gamma(&d, &a, &b, c, &SearchConfig::default()).unwrap();
        assert!(cmp.nrmse_change() <= c);
        let Gamma::Finite(g) = cmp.gamma else {
            panic!("finite gamma expected")
        };
        let neighbor = cmp.infeasible_neighbor.expect("bracket");
        assert!(neighbor < g);
        let f = svd_factor(d.x(), None).unwrap();
        let vn = relaxed_nullspace(&f, &cmp.beta_delta, neighbor).unwrap();
        let ln = nrmse(&(d.x() * (&a.beta + vn)), d.y()).unwrap();
        assert!((ln - cmp.nrmse_before).abs() > c);
        // The bracket is tight in log γ.
        assert!((g / neighbor).ln() < 1e-6);
    }

    #[test]
    fn loose_tolerance_accepts_gamma_zero() {
        let (d, a, b) = setup(7);
        let cmp = select_gamma(&d, &a, &b, 10.0, &SearchConfig::default()).unwrap();
        assert_eq!(cmp.gamma, Gamma::Finite(0.0));
        assert!((cmp.modified() - &b.beta).amax() < 1e-12);
    }

    #[test]
    fn provenance_is_checked() {
        let (d, a, b) = setup(8);
        let raw =
            CoefficientVector::new(b.beta.clone(), Method::True, Hyperparam::None, None).unwrap();
        assert!(matches!(
            select_gamma(&d, &a, &raw, 1e-3, &SearchConfig::default()),
            Err(Error::Provenance { .. })
        ));
    }

    #[test]
    fn fixed_gamma_comparison() {
        let (d, a, b) = setup(9);
        let cmp = compare_at_gamma(&d, &a, &b, Gamma::Infinite).unwrap();
        assert!((cmp.nrmse_after - cmp.nrmse_before).abs() < 1e-12);
        let mn = fit_min_norm(&d).unwrap();
        let cmp = compare_at_gamma(&d, &mn, &b, Gamma::Finite(0.0)).unwrap();
        assert!((cmp.modified() - &b.beta).amax() < 1e-14);
    }
}

use std::fmt;

use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::svd_factor;
use crate::preprocess::{apply_preprocess, fit_apply, fit_preprocess, Scheme};
use crate::regress::{
    fit_generalized_lasso, fit_min_norm, fit_pcr_factored, fit_pls, fit_pls_path,
    fit_ridge_factored, CoefficientVector, PenaltyKind, PenaltyMatrix, SolverConfig, WarmStart,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    MinNorm,
    Ridge,
    Pcr,
    Pls,
    Lasso,
    FusedLasso,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::MinNorm => "min-norm",
            Estimator::Ridge => "ridge",
            Estimator::Pcr => "pcr",
            Estimator::Pls => "pls",
            Estimator::Lasso => "lasso",
            Estimator::FusedLasso => "fused-lasso",
        })
    }
}

impl Estimator {
    fn penalty(self) -> Option<PenaltyKind> {
        match self {
            Estimator::Lasso => Some(PenaltyKind::Identity),
            Estimator::FusedLasso => Some(PenaltyKind::FirstDifference),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperValue {
    None,
    Lambda(f64),
    Components(usize),
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::None => f.write_str("-"),
            HyperValue::Lambda(l) => write!(f, "{l}"),
            HyperValue::Components(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    Lambda(Vec<f64>),
    Components(Vec<usize>),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Lambda(v) => v.len(),
            Grid::Components(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> HyperValue {
        match self {
            Grid::Lambda(v) => HyperValue::Lambda(v[i]),
            Grid::Components(v) => HyperValue::Components(v[i]),
        }
    }

    /// Larger means more regularized.
    fn strength(&self, i: usize) -> f64 {
        match self {
            Grid::Lambda(v) => v[i],
            Grid::Components(v) => -(v[i] as f64),
        }
    }

    fn keep(&self, idx: &[usize]) -> Grid {
        match self {
            Grid::Lambda(v) => Grid::Lambda(idx.iter().map(|&i| v[i]).collect()),
            Grid::Components(v) => Grid::Components(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Default grid for `est` on the raw dataset `d` preprocessed with `scheme`.
///
/// Lasso family: 50 points over `[1e-4, 1e2]·‖Xᵀy‖∞/n`; ridge: 50 points
/// over `[1e-6, 1e4]·σ_max²`; PCR/PLS: `1..=min(20, r)` with `r` the
/// smallest training-fold rank after centering.
pub fn default_grid(est: Estimator, d: &Dataset, scheme: Scheme, folds: usize) -> Result<Grid> {
    let (_, t) = fit_apply(d, scheme)?;
    match est {
        Estimator::MinNorm => Err(Error::Input(
            "min-norm has no hyperparameter to cross-validate".into(),
        )),
        Estimator::Ridge => {
            let s = svd_factor(t.x(), None)?.sigma_max().powi(2);
            Ok(Grid::Lambda(logspace(1e-6 * s, 1e4 * s, 50)))
        }
        Estimator::Lasso | Estimator::FusedLasso => {
            let scale = t.x().tr_mul(t.y()).amax() / t.n() as f64;
            if !(scale > 0.0) {
                return Err(Error::Input("X^T y vanishes; no lasso grid".into()));
            }
            Ok(Grid::Lambda(logspace(1e-4 * scale, 1e2 * scale, 50)))
        }
        Estimator::Pcr | Estimator::Pls => {
            let n = d.n();
            let largest_fold = n.div_ceil(folds.max(1));
            let r = (n.saturating_sub(largest_fold + 1))
                .min(t.p())
                .min(20)
                .max(1);
            Ok(Grid::Components((1..=r).collect()))
        }
    }
}

/// Fit one estimator at one hyperparameter value on preprocessed data.
pub fn fit_estimator(
    est: Estimator,
    value: HyperValue,
    d: &Dataset,
    solver: &SolverConfig,
) -> Result<CoefficientVector> {
    let mismatch = || Error::Config(format!("{est} cannot use hyperparameter {value:?}"));
    match (est, value) {
        (Estimator::MinNorm, HyperValue::None) => fit_min_norm(d),
        (Estimator::Ridge, HyperValue::Lambda(l)) => {
            let f = svd_factor(d.x(), None)?;
            fit_ridge_factored(d, &f, l)
        }
        (Estimator::Pcr, HyperValue::Components(m)) => {
            let f = svd_factor(d.x(), None)?;
            fit_pcr_factored(d, &f, m)
        }
        (Estimator::Pls, HyperValue::Components(m)) => Ok(fit_pls(d, m)?.0),
        (Estimator::Lasso | Estimator::FusedLasso, HyperValue::Lambda(l)) => {
            let kind = est.penalty().expect("lasso family");
            let pen = PenaltyMatrix::new(kind, d.p())?;
            Ok(fit_generalized_lasso(d, l, &pen, solver, None)?.coefficients)
        }
        _ => Err(mismatch()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Min,
    #[default]
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub rule: Rule,
    pub scheme: Scheme,
    pub solver: SolverConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            seed: 0,
            rule: Rule::OneSe,
            scheme: Scheme::Center,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub estimator: Estimator,
    /// Grid values that produced at least one fold error, in input order.
    pub grid: Grid,
    /// `fold_errors[k][i]`: held-out RMSE of fold `k` at grid value `i`.
    pub fold_errors: Vec<Vec<Option<f64>>>,
    pub mean_curve: Vec<f64>,
    /// Standard error of the mean: sample std of fold RMSEs over `√count`.
    pub std_curve: Vec<f64>,
    pub chosen_min: HyperValue,
    pub chosen_1se: HyperValue,
    pub rule_used: Rule,
    /// Held-out row indices per fold.
    pub folds: Vec<Vec<usize>>,
}

impl CvResult {
    pub fn chosen(&self) -> HyperValue {
        match self.rule_used {
            Rule::Min => self.chosen_min,
            Rule::OneSe => self.chosen_1se,
        }
    }
}

fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

fn rmse(beta: &DVector<f64>, test: &Dataset) -> f64 {
    let r = test.x() * beta - test.y();
    (r.norm_squared() / test.n() as f64).sqrt()
}

fn fold_errors(
    est: Estimator,
    grid: &Grid,
    train: &Dataset,
    test: &Dataset,
    solver: &SolverConfig,
) -> Vec<Option<f64>> {
    let mut out = vec![None; grid.len()];
    let record = |res: Result<DVector<f64>>, what: HyperValue| match res {
        Ok(b) => Some(rmse(&b, test)),
        Err(e) => {
            warn!("{est} at {what} failed in a fold: {e}");
            None
        }
    };
    match (est, grid) {
        (Estimator::Ridge, Grid::Lambda(ls)) => match svd_factor(train.x(), None) {
            Ok(f) => {
                for (i, &l) in ls.iter().enumerate() {
                    out[i] = record(
                        fit_ridge_factored(train, &f, l).map(|c| c.beta),
                        HyperValue::Lambda(l),
                    );
                }
            }
            Err(e) => warn!("fold factorization failed: {e}"),
        },
        (Estimator::Pcr, Grid::Components(ms)) => match svd_factor(train.x(), None) {
            Ok(f) => {
                for (i, &m) in ms.iter().enumerate() {
                    out[i] = record(
                        fit_pcr_factored(train, &f, m).map(|c| c.beta),
                        HyperValue::Components(m),
                    );
                }
            }
            Err(e) => warn!("fold factorization failed: {e}"),
        },
        (Estimator::Pls, Grid::Components(ms)) => {
            let rank = svd_factor(train.x(), None).map(|f| f.rank()).unwrap_or(0);
            let want = ms.iter().cloned().max().unwrap_or(0).min(rank);
            let path = match fit_pls_path(train, want) {
                Err(Error::PlsEarlyTermination { achieved, .. }) if achieved > 0 => {
                    fit_pls_path(train, achieved)
                }
                other => other,
            };
            match path {
                Ok((betas, _)) => {
                    for (i, &m) in ms.iter().enumerate() {
                        if m >= 1 && m <= betas.len() {
                            out[i] = Some(rmse(&betas[m - 1], test));
                        }
                    }
                    if ms.iter().any(|&m| m > betas.len()) {
                        warn!("pls stopped at {} components in a fold; larger grid values skipped there", betas.len());
                    }
                }
                Err(e) => warn!("pls failed in a fold: {e}"),
            }
        }
        (Estimator::Lasso | Estimator::FusedLasso, Grid::Lambda(ls)) => {
            let pen = match PenaltyMatrix::new(est.penalty().expect("lasso family"), train.p()) {
                Ok(p) => p,
                Err(e) => {
                    warn!("{e}");
                    return out;
                }
            };
            // Strongest penalty first so each fit warm-starts the next.
            let mut order: Vec<usize> = (0..ls.len()).collect();
            order.sort_by(|&a, &b| ls[b].total_cmp(&ls[a]));
            let mut warm: Option<WarmStart> = None;
            for i in order {
                match fit_generalized_lasso(train, ls[i], &pen, solver, warm.as_ref()) {
                    Ok(fit) => {
                        out[i] = Some(rmse(&fit.coefficients.beta, test));
                        warm = Some(fit.report.warm);
                    }
                    Err(e) => {
                        warn!("{est} at lambda {} failed in a fold: {e}", ls[i]);
                        warm = None;
                    }
                }
            }
        }
        _ => unreachable!("grid kind checked by caller"),
    }
    out
}

/// K-fold cross-validation of `est` over `grid` on the raw dataset `d`.
///
/// Preprocessing is refit on every training fold; errors are held-out RMSE
/// in the dataset's response space (after any response transform).
pub fn cross_validate(
    d: &Dataset,
    est: Estimator,
    grid: &Grid,
    cfg: &CvConfig,
) -> Result<CvResult> {
    if d.transform().is_some() {
        return Err(Error::Input(
            "cross-validation expects raw (unpreprocessed) data".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Input("empty hyperparameter grid".into()));
    }
    if cfg.folds < 2 || cfg.folds > d.n() {
        return Err(Error::Input(format!(
            "folds must be in 2..={}, got {}",
            d.n(),
            cfg.folds
        )));
    }
    let grid_ok = matches!(
        (est, grid),
        (
            Estimator::Ridge | Estimator::Lasso | Estimator::FusedLasso,
            Grid::Lambda(_)
        ) | (Estimator::Pcr | Estimator::Pls, Grid::Components(_))
    );
    if !grid_ok {
        return Err(Error::Config(format!(
            "{est} cannot be cross-validated over {grid:?}"
        )));
    }
    if let Grid::Lambda(ls) = grid {
        if ls.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Input(
                "lambda grid values must be positive and finite".into(),
            ));
        }
    }

    let folds = fold_assignment(d.n(), cfg.folds, cfg.seed);
    let errors = folds
        .par_iter()
        .map(|held| -> Result<Vec<Option<f64>>> {
            let train_rows: Vec<usize> = (0..d.n()).filter(|i| !held.contains(i)).collect();
            let train_raw = d.select_rows(&train_rows);
            let test_raw = d.select_rows(held);
            let state = match fit_preprocess(&train_raw, cfg.scheme) {
                Ok(s) => s,
                Err(e) => {
                    warn!("fold preprocessing failed: {e}");
                    return Ok(vec![None; grid.len()]);
                }
            };
            let train = apply_preprocess(&state, &train_raw)?;
            let test = apply_preprocess(&state, &test_raw)?;
            Ok(fold_errors(est, grid, &train, &test, &cfg.solver))
        })
        .collect::<Result<Vec<_>>>()?;

    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..grid.len()).partition(|&i| errors.iter().any(|row| row[i].is_some()));
    if !dropped.is_empty() {
        let values: Vec<String> = dropped.iter().map(|&i| grid.value(i).to_string()).collect();
        warn!(
            "{est} failed in every fold at {}; dropped",
            values.join(", ")
        );
    }
    if kept.is_empty() {
        return Err(Error::Numerical(format!(
            "{est} failed at every grid value"
        )));
    }
    let grid = grid.keep(&kept);
    let fold_errors: Vec<Vec<Option<f64>>> = errors
        .iter()
        .map(|row| kept.iter().map(|&i| row[i]).collect())
        .collect();

    let mut mean_curve = Vec::with_capacity(kept.len());
    let mut std_curve = Vec::with_capacity(kept.len());
    for i in 0..kept.len() {
        let vals: Vec<f64> = fold_errors.iter().filter_map(|row| row[i]).collect();
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let se = if vals.len() > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        mean_curve.push(mean);
        std_curve.push(se);
    }

    // Means over different fold subsets are not comparable, so only grid
    // values with the most successful folds compete.
    let counts: Vec<usize> = (0..kept.len())
        .map(|i| fold_errors.iter().filter(|row| row[i].is_some()).count())
        .collect();
    let full = counts.iter().cloned().max().unwrap_or(0);
    let eligible: Vec<usize> = (0..kept.len()).filter(|&i| counts[i] == full).collect();
    let more_regularized = |a: usize, b: usize| grid.strength(a) > grid.strength(b);
    let mut imin = eligible[0];
    for &i in &eligible[1..] {
        if mean_curve[i] < mean_curve[imin]
            || (mean_curve[i] == mean_curve[imin] && more_regularized(i, imin))
        {
            imin = i;
        }
    }
    let threshold = mean_curve[imin] + std_curve[imin];
    let mut i1se = imin;
    for &i in &eligible {
        if mean_curve[i] <= threshold && more_regularized(i, i1se) {
            i1se = i;
        }
    }

    Ok(CvResult {
        estimator: est,
        chosen_min: grid.value(imin),
        chosen_1se: grid.value(i1se),
        grid,
        fold_errors,
        mean_curve,
        std_curve,
        rule_used: cfg.rule,
        folds,
    })
}

//! Generalized lasso `min ½‖y − Xβ‖² + λ‖Dβ‖₁` by ADMM.
//!
//! The splitting constraint is `D̃β = z`, where `D̃` is `D` itself for the
//! identity penalty and `D1` with the extra row `e_pᵀ` for the
//! first-difference penalty. The extra row carries no penalty, so `D̃` is
//! square and invertible and the β-update can be solved in the coordinates
//! `θ = D̃β` with an `n × n` Woodbury system. Residuals are measured in
//! those coordinates.
//!
//! On ill-conditioned designs (long running sums of z-scored columns) ADMM
//! alone can need far more than the iteration cap to reach its residual
//! tolerance. Every `POLISH_PERIOD` iterations, and when the tolerance is
//! met, the current `z` therefore seeds an active-set search that solves
//! the problem exactly; its result is accepted only if it satisfies the
//! full optimality conditions, and ADMM continues otherwise.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{CoefficientVector, Hyperparam, Method};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::svd_factor;

const RHO_MU: f64 = 100.0;
const RHO_TAU: f64 = 2.0;
const RHO_PERIOD: usize = 10;
const RHO_WINDOW: usize = 1000;
const POLISH_PERIOD: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    Identity,
    FirstDifference,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::Identity => "identity",
            PenaltyKind::FirstDifference => "D1",
        })
    }
}

/// Structured penalty matrix `D`; never stored densely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PenaltyMatrix {
    kind: PenaltyKind,
    rows: usize,
    cols: usize,
}

impl PenaltyMatrix {
    pub fn new(kind: PenaltyKind, p: usize) -> Result<Self> {
        match kind {
            PenaltyKind::Identity if p >= 1 => Ok(PenaltyMatrix {
                kind,
                rows: p,
                cols: p,
            }),
            PenaltyKind::FirstDifference if p >= 2 => Ok(PenaltyMatrix {
                kind,
                rows: p - 1,
                cols: p,
            }),
            _ => Err(Error::Input(format!(
                "{kind} penalty is undefined for p = {p}"
            ))),
        }
    }

    pub fn identity(p: usize) -> Result<Self> {
        Self::new(PenaltyKind::Identity, p)
    }

    pub fn first_difference(p: usize) -> Result<Self> {
        Self::new(PenaltyKind::FirstDifference, p)
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn apply(&self, beta: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            PenaltyKind::Identity => beta.clone(),
            PenaltyKind::FirstDifference => {
                DVector::from_fn(self.rows, |i, _| beta[i] - beta[i + 1])
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self.kind {
            PenaltyKind::Identity => DMatrix::identity(self.rows, self.cols),
            PenaltyKind::FirstDifference => DMatrix::from_fn(self.rows, self.cols, |i, j| {
                if j == i {
                    1.0
                } else if j == i + 1 {
                    -1.0
                } else {
                    0.0
                }
            }),
        }
    }

    fn penalized(&self, k: usize) -> bool {
        k < self.rows
    }

    /// `β = D̃⁻¹ θ`.
    fn to_beta(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            PenaltyKind::Identity => theta.clone(),
            PenaltyKind::FirstDifference => {
                let mut beta = theta.clone();
                for i in (0..self.cols - 1).rev() {
                    beta[i] += beta[i + 1];
                }
                beta
            }
        }
    }

    /// `X D̃⁻¹`: running column sums for the first-difference penalty.
    fn transform_design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.kind {
            PenaltyKind::Identity => x.clone(),
            PenaltyKind::FirstDifference => {
                let mut out = x.clone();
                for j in 1..out.ncols() {
                    let prev = out.column(j - 1).into_owned();
                    let mut col = out.column_mut(j);
                    col += &prev;
                }
                out
            }
        }
    }

    /// `θ = D̃β`.
    #[cfg(test)]
    fn to_theta(&self, beta: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            PenaltyKind::Identity => beta.clone(),
            PenaltyKind::FirstDifference => {
                let mut t = self.apply(beta).resize_vertically(self.cols, 0.0);
                t[self.cols - 1] = beta[self.cols - 1];
                t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    /// Residual balancing of the penalty parameter.
    pub adaptive_rho: bool,
    /// Snap runs with `|Dβ| ≤ fusion_tol` to their mean after convergence.
    pub fuse: bool,
    pub fusion_tol: f64,
    /// Record the objective every this many iterations (0 disables).
    pub trace_every: usize,
    /// Periodic active-set refinement seeded from `z` (see module docs).
    pub polish: bool,
    /// Allowed relative excess of `|X̃ₖᵀr|` over `λ` off the support.
    pub kkt_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            max_iter: 50_000,
            rho: 1.0,
            adaptive_rho: true,
            fuse: false,
            fusion_tol: 1e-8,
            trace_every: 0,
            polish: true,
            kkt_tol: 1e-9,
        }
    }
}

/// Solver state to restart from, e.g. along a λ path.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub theta: DVector<f64>,
    pub z: DVector<f64>,
    /// Scaled dual variable.
    pub u: DVector<f64>,
    pub rho: f64,
}

/// Objective of the β iterate, recorded every `trace_every` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    /// `‖θ − z‖` at that iteration; the objective is only meaningful once
    /// this is small.
    pub primal_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub rho: f64,
    /// Whether the result came from the exact active-set refinement.
    pub polished: bool,
    pub objective_trace: Vec<TracePoint>,
    pub warm: WarmStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedLassoFit {
    pub coefficients: CoefficientVector,
    pub report: ConvergenceReport,
}

pub fn generalized_lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    penalty: &PenaltyMatrix,
    lambda: f64,
) -> f64 {
    0.5 * (y - x * beta).norm_squared() + lambda * penalty.apply(beta).lp_norm(1)
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Woodbury<'a> {
    xt: &'a DMatrix<f64>,
    gram: &'a DMatrix<f64>,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> Woodbury<'a> {
    fn new(xt: &'a DMatrix<f64>, gram: &'a DMatrix<f64>, rho: f64) -> Result<Self> {
        let n = gram.nrows();
        let chol = (gram + DMatrix::<f64>::identity(n, n) * rho)
            .cholesky()
            .ok_or_else(|| Error::Numerical("ADMM system is not positive definite".into()))?;
        Ok(Woodbury {
            xt,
            gram,
            rho,
            chol,
        })
    }

    /// `(X̃ᵀX̃ + ρI)⁻¹ q`.
    fn solve(&self, q: &DVector<f64>) -> DVector<f64> {
        let inner = self.chol.solve(&(self.xt * q));
        (q - self.xt.tr_mul(&inner)) / self.rho
    }

    fn with_rho(self, rho: f64) -> Result<Self> {
        Woodbury::new(self.xt, self.gram, rho)
    }
}

fn fuse(beta: &mut DVector<f64>, penalty: &PenaltyMatrix, tol: f64) {
    match penalty.kind() {
        PenaltyKind::Identity => beta.apply(|v| {
            if v.abs() <= tol {
                *v = 0.0
            }
        }),
        PenaltyKind::FirstDifference => {
            let p = beta.len();
            let mut start = 0;
            for i in 1..=p {
                if i == p || (beta[i - 1] - beta[i]).abs() > tol {
                    if i - start > 1 {
                        let mean = beta.rows(start, i - start).mean();
                        beta.rows_mut(start, i - start).fill(mean);
                    }
                    start = i;
                }
            }
        }
    }
}

/// Target point for a feature-sign step on `support` with signs `s`.
///
/// Normally the solution of `A_SᵀA_S θ = A_Sᵀy − λ s`. When `A_S` has a
/// one-dimensional nullspace (a column was added at the rank limit) that
/// system has no solution; the target is then the point on the line of
/// least-squares minimizers with the smallest penalty, which has one
/// penalized coordinate exactly zero.
fn reduced_target(
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    s: &DVector<f64>,
    lambda: f64,
    penalty: &PenaltyMatrix,
) -> Option<DVector<f64>> {
    let a = xt.select_columns(support.iter());
    if support.len() <= xt.nrows() {
        let qr = a.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > 1e-12 * scale) {
            let w = r.tr_solve_upper_triangular(&(s * lambda))?;
            return r.solve_upper_triangular(&(qr.q().tr_mul(y) - w));
        }
    }
    let f = svd_factor(&a, Some(1e-10)).ok()?;
    if f.v0().ncols() != 1 {
        return None;
    }
    let null = f.v0().column(0);
    let sv = f.singular_values();
    let uy = f.u().tr_mul(y).component_div(sv);
    let vs = f.v1().tr_mul(s).component_div(&sv.component_mul(sv)) * lambda;
    let base = f.v1() * (uy - vs);
    let l1 = |t: f64| -> f64 {
        support
            .iter()
            .enumerate()
            .filter(|(_, &k)| penalty.penalized(k))
            .map(|(i, _)| (base[i] + t * null[i]).abs())
            .sum()
    };
    let (i, t) = support
        .iter()
        .enumerate()
        .filter(|(i, &k)| penalty.penalized(k) && null[*i] != 0.0)
        .map(|(i, _)| (i, -base[i] / null[i]))
        .min_by(|a, b| l1(a.1).total_cmp(&l1(b.1)))?;
    let mut target = base + null * t;
    target[i] = 0.0;
    Some(target)
}

/// Exact minimizer in `θ` coordinates by an active-set (feature-sign)
/// search seeded with the nonzero pattern of `seed`.
///
/// Returns `θ` and the correlations `g = X̃ᵀ(y − X̃θ)`, or `None` when a
/// reduced system is singular or the search stalls.
fn active_set_refine(
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: &DVector<f64>,
    penalty: &PenaltyMatrix,
    lambda: f64,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, p) = (xt.nrows(), xt.ncols());
    let free: Vec<usize> = (0..p).filter(|&k| !penalty.penalized(k)).collect();
    let mut theta = DVector::zeros(p);
    let mut sign = DVector::zeros(p);
    let mut seeded: Vec<usize> = (0..p)
        .filter(|&k| penalty.penalized(k) && seed[k] != 0.0)
        .collect();
    if seeded.len() + free.len() <= n {
        for &k in &seeded {
            sign[k] = seed[k].signum();
        }
    } else {
        seeded.clear();
    }
    let mut support: Vec<usize> = free.iter().chain(&seeded).cloned().collect();
    support.sort_unstable();
    for &k in &support {
        theta[k] = seed[k];
    }

    let objective = |support: &[usize], t: &DVector<f64>| -> f64 {
        let mut r = y.clone();
        for (i, &k) in support.iter().enumerate() {
            r.axpy(-t[i], &xt.column(k), 1.0);
        }
        let l1: f64 = support
            .iter()
            .enumerate()
            .filter(|(_, &k)| penalty.penalized(k))
            .map(|(i, _)| t[i].abs())
            .sum();
        0.5 * r.norm_squared() + lambda * l1
    };

    for _ in 0..10 * (n + 10) {
        // Feature-sign steps until the active signs are consistent.
        let mut steps = 0;
        loop {
            steps += 1;
            if steps > 4 * (n + 10) {
                return None;
            }
            let s = DVector::from_iterator(support.len(), support.iter().map(|&k| sign[k]));
            let target = reduced_target(xt, y, &support, &s, lambda, penalty)?;
            let current = DVector::from_iterator(support.len(), support.iter().map(|&k| theta[k]));
            let consistent = support
                .iter()
                .enumerate()
                .all(|(i, &k)| !penalty.penalized(k) || target[i] * sign[k] > 0.0);
            if consistent {
                for (i, &k) in support.iter().enumerate() {
                    theta[k] = target[i];
                }
                break;
            }
            // Best point on the segment among sign crossings and the end.
            let mut best = (objective(&support, &target), target.clone());
            for (i, &k) in support.iter().enumerate() {
                let (c, h) = (current[i], target[i]);
                if penalty.penalized(k) && c != 0.0 && c.signum() != h.signum() {
                    let mut pt = &current + (&target - &current) * (c / (c - h));
                    pt[i] = 0.0;
                    let f = objective(&support, &pt);
                    if f < best.0 {
                        best = (f, pt);
                    }
                }
            }
            if best.0 > objective(&support, &current) * (1.0 + 1e-12) {
                return None;
            }
            for (i, &k) in support.iter().enumerate() {
                theta[k] = best.1[i];
            }
            support.retain(|&k| !penalty.penalized(k) || theta[k] != 0.0);
            for &k in support.iter().filter(|&&k| penalty.penalized(k)) {
                sign[k] = theta[k].signum();
            }
        }

        let g = xt.tr_mul(&(y - xt * &theta));
        let worst = (0..p)
            .filter(|&k| penalty.penalized(k) && theta[k] == 0.0)
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()));
        match worst {
            Some(k) if g[k].abs() > lambda * (1.0 + tol) => {
                // An exact coordinate step keeps every active coordinate
                // nonzero, so the next segment starts as a descent direction.
                sign[k] = g[k].signum();
                theta[k] = sign[k] * (g[k].abs() - lambda) / xt.column(k).norm_squared();
                let at = support.partition_point(|&j| j < k);
                support.insert(at, k);
            }
            _ => return Some((theta, g)),
        }
    }
    None
}

/// Solve the generalized lasso on `d` (normally centered).
pub fn fit_generalized_lasso(
    d: &Dataset,
    lambda: f64,
    penalty: &PenaltyMatrix,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<GeneralizedLassoFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Input(format!(
            "lasso lambda must be positive and finite, got {lambda}"
        )));
    }
    if penalty.cols() != d.p() {
        return Err(Error::Dimension(format!(
            "penalty has {} columns, data has {} predictors",
            penalty.cols(),
            d.p()
        )));
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::Input(format!(
            "ADMM rho must be positive, got {}",
            cfg.rho
        )));
    }
    let p = d.p();
    let xt = penalty.transform_design(d.x());
    let gram = &xt * xt.transpose();
    let xty = xt.tr_mul(d.y());

    let (mut theta, mut z, mut u, mut rho) = match warm {
        Some(w) if w.theta.len() == p => (w.theta.clone(), w.z.clone(), w.u.clone(), w.rho),
        Some(_) => return Err(Error::Dimension("warm start has the wrong length".into())),
        None => (
            DVector::zeros(p),
            DVector::zeros(p),
            DVector::zeros(p),
            cfg.rho,
        ),
    };
    let mut system = Woodbury::new(&xt, &gram, rho)?;
    let sqrt_p = (p as f64).sqrt();
    let mut trace = Vec::new();
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged_at = None;
    let mut polished = false;

    for it in 1..=cfg.max_iter {
        let q = &xty + (&z - &u) * rho;
        theta = system.solve(&q);

        let z_old = std::mem::replace(&mut z, &theta + &u);
        let t = lambda / rho;
        for k in 0..p {
            if penalty.penalized(k) {
                z[k] = soft_threshold(z[k], t);
            }
        }
        let r = &theta - &z;
        u += &r;

        primal = r.norm();
        dual = rho * (&z - &z_old).norm();
        let eps_pri = sqrt_p * cfg.abs_tol + cfg.rel_tol * theta.norm().max(z.norm());
        let eps_dual = sqrt_p * cfg.abs_tol + cfg.rel_tol * rho * u.norm();

        if cfg.trace_every > 0 && it % cfg.trace_every == 0 {
            let b = penalty.to_beta(&theta);
            trace.push(TracePoint {
                iteration: it,
                objective: generalized_lasso_objective(d.x(), d.y(), &b, penalty, lambda),
                primal_residual: primal,
            });
        }
        let tolerance_met = primal <= eps_pri && dual <= eps_dual;
        if cfg.polish && (tolerance_met || it % POLISH_PERIOD == 0) {
            if let Some((exact, g)) =
                active_set_refine(&xt, d.y(), &z, penalty, lambda, cfg.kkt_tol)
            {
                theta = exact.clone();
                z = exact;
                u = g / rho;
                polished = true;
                converged_at = Some(it);
                break;
            }
        }
        if tolerance_met {
            converged_at = Some(it);
            break;
        }
        // Rebalancing late in the run can make the iteration cycle, so it
        // only happens early and within a bounded range.
        if cfg.adaptive_rho && it % RHO_PERIOD == 0 && it <= RHO_WINDOW {
            let new_rho = if primal > RHO_MU * dual {
                rho * RHO_TAU
            } else if dual > RHO_MU * primal {
                rho / RHO_TAU
            } else {
                rho
            }
            .clamp(cfg.rho * 1e-4, cfg.rho * 1e4);
            if new_rho != rho {
                u *= rho / new_rho;
                rho = new_rho;
                system = system.with_rho(rho)?;
            }
        }
    }

    let mut beta = penalty.to_beta(&theta);
    let Some(iterations) = converged_at else {
        return Err(Error::NotConverged {
            iterations: cfg.max_iter,
            primal,
            dual,
            best: beta.iter().cloned().collect(),
        });
    };
    if cfg.fuse {
        fuse(&mut beta, penalty, cfg.fusion_tol);
    }
    let objective = generalized_lasso_objective(d.x(), d.y(), &beta, penalty, lambda);
    let method = match penalty.kind() {
        PenaltyKind::Identity => Method::Lasso,
        PenaltyKind::FirstDifference => Method::FusedLasso,
    };
    let coefficients = CoefficientVector::new(
        beta,
        method,
        Hyperparam::Penalized {
            lambda,
            penalty: penalty.kind(),
        },
        d.transform().cloned(),
    )?;
    Ok(GeneralizedLassoFit {
        coefficients,
        report: ConvergenceReport {
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            objective,
            rho,
            polished,
            objective_trace: trace,
            warm: WarmStart { theta, z, u, rho },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{fit_apply, Scheme};
    use crate::regress::fit_min_norm;
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
    fn first_difference_shape() {
        let d = PenaltyMatrix::first_difference(4).unwrap();
        assert_eq!((d.rows(), d.cols()), (3, 4));
        let dense = d.to_dense();
        assert_eq!(
            dense.row(1).iter().cloned().collect::<Vec<_>>(),
            vec![0.0, 1.0, -1.0, 0.0]
        );
        let b = DVector::from_vec(vec![1.0, 4.0, 2.0, 2.0]);
        assert_eq!(d.apply(&b), &dense * &b);
        assert!(PenaltyMatrix::first_difference(1).is_err());
    }

    #[test]
    fn theta_round_trip() {
        let d = PenaltyMatrix::first_difference(5).unwrap();
        let b = DVector::from_vec(vec![0.5, -1.0, 3.0, 2.0, 7.0]);
        assert!((d.to_beta(&d.to_theta(&b)) - &b).amax() < 1e-14);
        let x = DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.1);
        assert!((d.transform_design(&x) * d.to_theta(&b) - &x * &b).amax() < 1e-12);
    }

    #[test]
    fn soft_threshold_orthogonal_design() {
        let d = Dataset::new(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, 0.5])).unwrap();
        let fit = fit_generalized_lasso(
            &d,
            1.0,
            &PenaltyMatrix::identity(2).unwrap(),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        let b = &fit.coefficients.beta;
        assert!((b[0] - 2.0).abs() <= 1e-6 && b[1].abs() <= 1e-6, "{b}");
        assert_eq!(fit.coefficients.method, Method::Lasso);
    }

    #[test]
    fn huge_lambda_fuses_to_constant() {
        let d = random(6, 12, 3);
        let ones = DVector::from_element(12, 1.0);
        let x1 = d.x() * &ones;
        let c_star = x1.dot(d.y()) / x1.norm_squared();
        let lambda = 1e6 * d.x().tr_mul(d.y()).amax();
        let fit = fit_generalized_lasso(
            &d,
            lambda,
            &PenaltyMatrix::first_difference(12).unwrap(),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        for &b in fit.coefficients.beta.iter() {
            assert!((b - c_star).abs() <= 1e-4 * c_star.abs(), "{b} vs {c_star}");
        }
    }

    #[test]
    fn beats_min_norm_objective() {
        let (_, d) = fit_apply(&random(8, 30, 4), Scheme::Center).unwrap();
        let pen = PenaltyMatrix::first_difference(30).unwrap();
        let lambda = 0.3;
        let fit = fit_generalized_lasso(&d, lambda, &pen, &SolverConfig::default(), None).unwrap();
        let mn = fit_min_norm(&d).unwrap();
        let obj_mn = generalized_lasso_objective(d.x(), d.y(), &mn.beta, &pen, lambda);
        assert!(fit.report.objective <= obj_mn);
    }

    #[test]
    fn matches_dense_kkt_conditions() {
        // Subgradient optimality: Xᵀ(y − Xβ) = λ Dᵀ s with s ∈ ∂‖Dβ‖₁.
        let d = random(5, 8, 5);
        let pen = PenaltyMatrix::identity(8).unwrap();
        let lambda = 0.2;
        let cfg = SolverConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..SolverConfig::default()
        };
        let fit = fit_generalized_lasso(&d, lambda, &pen, &cfg, None).unwrap();
        let b = &fit.coefficients.beta;
        let g = d.x().tr_mul(&(d.y() - d.x() * b));
        for k in 0..8 {
            if b[k].abs() > 1e-8 {
                assert!((g[k] - lambda * b[k].signum()).abs() < 1e-6);
            } else {
                assert!(g[k].abs() <= lambda + 1e-6);
            }
        }
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let d = random(5, 10, 6);
        let cfg = SolverConfig {
            max_iter: 3,
            adaptive_rho: false,
            ..SolverConfig::default()
        };
        match fit_generalized_lasso(
            &d,
            0.1,
            &PenaltyMatrix::first_difference(10).unwrap(),
            &cfg,
            None,
        ) {
            Err(Error::NotConverged {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.len(), 10);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn warm_start_converges_faster() {
        let (_, d) = fit_apply(&random(8, 40, 7), Scheme::Center).unwrap();
        let pen = PenaltyMatrix::first_difference(40).unwrap();
        let cfg = SolverConfig::default();
        let a = fit_generalized_lasso(&d, 0.5, &pen, &cfg, None).unwrap();
        let cold = fit_generalized_lasso(&d, 0.45, &pen, &cfg, None).unwrap();
        let warm = fit_generalized_lasso(&d, 0.45, &pen, &cfg, Some(&a.report.warm)).unwrap();
        assert!(warm.report.iterations <= cold.report.iterations);
        assert!((warm.coefficients.beta - cold.coefficients.beta).amax() < 1e-4);
    }

    #[test]
    fn plain_admm_agrees_with_refined() {
        let (_, d) = fit_apply(&random(10, 12, 9), Scheme::Center).unwrap();
        let pen = PenaltyMatrix::first_difference(12).unwrap();
        let refined = fit_generalized_lasso(&d, 0.2, &pen, &SolverConfig::default(), None).unwrap();
        let plain_cfg = SolverConfig {
            polish: false,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..SolverConfig::default()
        };
        let plain = fit_generalized_lasso(&d, 0.2, &pen, &plain_cfg, None).unwrap();
        assert!(refined.report.polished && !plain.report.polished);
        assert!((refined.coefficients.beta - plain.coefficients.beta).amax() < 1e-6);
    }

    #[test]
    fn refinement_at_the_rank_limit() {
        // Centered 8×60 data has rank 7; small λ pushes the support there.
        let (_, d) = fit_apply(&random(8, 60, 10), Scheme::Center).unwrap();
        let pen = PenaltyMatrix::first_difference(60).unwrap();
        let lambda = 1e-6;
        let fit = fit_generalized_lasso(&d, lambda, &pen, &SolverConfig::default(), None).unwrap();
        assert!(fit.report.polished);
        let theta = &fit.report.warm.theta;
        let g = pen
            .transform_design(d.x())
            .tr_mul(&(d.y() - d.x() * &fit.coefficients.beta));
        for k in 0..59 {
            if theta[k] != 0.0 {
                assert!(
                    (g[k] - lambda * theta[k].signum()).abs() < 1e-6 * lambda,
                    "{k} {} {}",
                    g[k],
                    theta[k]
                );
            } else {
                assert!(g[k].abs() <= lambda * (1.0 + 1e-6));
            }
        }
        assert!(g[59].abs() < 1e-10);
    }

    #[test]
    fn fusion_snaps_runs() {
        let pen = PenaltyMatrix::first_difference(5).unwrap();
        let mut b = DVector::from_vec(vec![1.0, 1.0 + 1e-10, 1.0 - 1e-10, 2.0, 2.0 + 5e-9]);
        fuse(&mut b, &pen, 1e-8);
        assert_eq!(b[0], b[1]);
        assert_eq!(b[1], b[2]);
        assert_eq!(b[3], b[4]);
        assert!((b[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = random(3, 4, 8);
        let cfg = SolverConfig::default();
        assert!(
            fit_generalized_lasso(&d, 0.0, &PenaltyMatrix::identity(4).unwrap(), &cfg, None)
                .is_err()
        );
        assert!(matches!(
            fit_generalized_lasso(&d, 1.0, &PenaltyMatrix::identity(5).unwrap(), &cfg, None),
            Err(Error::Dimension(_))
        ));
    }
}

//! Dense SVD substrate: numerical rank, the row-space/nullspace split of the
//! right singular vectors, and pseudo-inverse application.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD of `X` plus an orthonormal basis of its numerical nullspace.
///
/// `X ≈ U · diag(σ) · V1ᵀ`, where only singular values strictly above
/// `rank_tolerance` are kept. The columns of `[V1 V0]` form an orthonormal
/// basis of `R^p`, so `V0` spans `N(X)`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v1: DMatrix<f64>,
    v0: DMatrix<f64>,
    rank_tolerance: f64,
}

impl SvdFactors {
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Row-space basis, `p × r`.
    pub fn v1(&self) -> &DMatrix<f64> {
        &self.v1
    }

    /// Nullspace basis, `p × (p − r)`.
    pub fn v0(&self) -> &DMatrix<f64> {
        &self.v0
    }

    /// Absolute singular-value cutoff that was applied.
    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v1.nrows()
    }

    pub fn sigma_max(&self) -> f64 {
        if self.rank() == 0 {
            0.0
        } else {
            self.singular_values[0]
        }
    }

    /// `V1 · diag(g(σ)) · Uᵀ · y` for a spectral filter `g`.
    pub fn spectral_apply(&self, y: &DVector<f64>, filter: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut coords = self.u.tr_mul(y);
        for (c, &s) in coords.iter_mut().zip(self.singular_values.iter()) {
            *c *= filter(s);
        }
        &self.v1 * coords
    }

    /// Component of `b` lying in `N(X)`: `V0 V0ᵀ b`.
    pub fn nullspace_part(&self, b: &DVector<f64>) -> DVector<f64> {
        if self.v0.ncols() == 0 {
            return DVector::zeros(b.len());
        }
        &self.v0 * self.v0.tr_mul(b)
    }

    /// `U · diag(σ) · V1ᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v1.transpose()
    }
}

/// Default relative rank tolerance: `max(n, p) · ε`.
pub fn default_rtol(nrows: usize, ncols: usize) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON
}

/// Factor `x` and split its right singular vectors at the numerical rank.
///
/// Singular values `σ_i ≤ rtol · σ_max` are treated as zero. Each right
/// singular vector is signed so that its largest-magnitude entry is positive
/// (the matching left vector is flipped with it).
pub fn svd_factor(x: &DMatrix<f64>, rtol: Option<f64>) -> Result<SvdFactors> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::Input(format!(
            "cannot factor an empty {n}x{p} matrix"
        )));
    }
    if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Input(format!(
            "non-finite entry at row {}, column {}",
            idx % n,
            idx / n
        )));
    }
    let rtol = rtol.unwrap_or_else(|| default_rtol(n, p));
    if !(rtol >= 0.0) {
        return Err(Error::Input(format!(
            "rank tolerance must be nonnegative, got {rtol}"
        )));
    }

    let (u_full, sigma, v_full) = jacobi_svd(x)?;

    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let tol = rtol * sigma_max;
    let rank = sigma.iter().filter(|&&s| s > tol && s > 0.0).count();

    let mut u = DMatrix::zeros(n, rank);
    let mut v1 = DMatrix::zeros(p, rank);
    for k in 0..rank {
        let mut vk = v_full.column(k).into_owned();
        let mut uk = u_full.column(k).into_owned();
        let lead = vk
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1.abs() {
                    (i, v)
                } else {
                    best
                }
            });
        if lead.1 < 0.0 {
            vk.neg_mut();
            uk.neg_mut();
        }
        u.set_column(k, &uk);
        v1.set_column(k, &vk);
    }
    let singular_values = DVector::from_iterator(rank, sigma.iter().take(rank).cloned());
    let v0 = orthogonal_complement(&v1);

    Ok(SvdFactors {
        u,
        singular_values,
        v1,
        v0,
        rank_tolerance: tol,
    })
}

/// Thin SVD by one-sided Jacobi rotations on the short side of `x`.
///
/// Returns `(U, σ, V)` with `min(n, p)` columns, sorted by decreasing `σ`.
/// Columns belonging to zero singular values are left as zero vectors.
fn jacobi_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let wide = x.nrows() < x.ncols();
    // Orthogonalize the columns of `a` (m × k, m ≥ k): a · z = w · diag(σ).
    let mut a = if wide { x.transpose() } else { x.clone() };
    let k = a.ncols();
    let mut z = DMatrix::<f64>::identity(k, k);
    let mut norms: Vec<f64> = (0..k).map(|j| a.column(j).norm_squared()).collect();

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let (aii, ajj) = (norms[i], norms[j]);
                if aii == 0.0 || ajj == 0.0 {
                    continue;
                }
                let aij = a.column(i).dot(&a.column(j));
                if aij.abs() <= f64::EPSILON * (aii * ajj).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (ajj - aii) / (2.0 * aij);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, i, j, c, s);
                rotate_columns(&mut z, i, j, c, s);
                norms[i] = a.column(i).norm_squared();
                norms[j] = a.column(j).norm_squared();
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<usize> = (0..k).collect();
    let sig: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    order.sort_by(|&p, &q| sig[q].total_cmp(&sig[p]));
    let m = a.nrows();
    let mut w = DMatrix::zeros(m, k);
    let mut zs = DMatrix::zeros(k, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let s = sig[src];
        if s > 0.0 {
            w.set_column(dst, &(a.column(src) / s));
        }
        zs.set_column(dst, &z.column(src));
        sigma.push(s);
    }
    Ok(if wide { (zs, sigma, w) } else { (w, sigma, zs) })
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `q` (`p × r` in, `p × (p − r)` out).
///
/// Householder reflections `H_1 … H_r` triangularize `q`; the trailing
/// `p − r` columns of `H_1 ⋯ H_r` span the complement.
pub(crate) fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, r) = q.shape();
    let mut a = q.clone();
    let mut reflectors: Vec<(usize, DVector<f64>)> = Vec::with_capacity(r);
    for k in 0..r.min(p) {
        let x = a.view((k, k), (p - k, 1)).into_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = DVector::from_column_slice(x.as_slice());
        v[0] += sign * alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            continue;
        }
        v /= vnorm;
        // A[k.., k..] -= 2 v (vᵀ A[k.., k..])
        let mut block = a.view_mut((k, k), (p - k, r - k));
        let w = block.tr_mul(&v);
        block.ger(-2.0, &v, &w, 1.0);
        reflectors.push((k, v));
    }

    let m = p - r;
    let mut out = DMatrix::zeros(p, m);
    for j in 0..m {
        let mut e = DVector::zeros(p);
        e[r + j] = 1.0;
        for (k, v) in reflectors.iter().rev() {
            let mut tail = e.rows_mut(*k, p - k);
            let d = v.dot(&tail);
            tail.axpy(-2.0 * d, v, 1.0);
        }
        out.set_column(j, &e);
    }
    out
}

/// Minimum-norm least-squares solution `X† y = V1 · diag(1/σ) · Uᵀ · y`.
pub fn pinv_apply(f: &SvdFactors, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != f.nrows() {
        return Err(Error::Dimension(format!(
            "response has length {}, factors expect {}",
            y.len(),
            f.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("response contains non-finite values".into()));
    }
    Ok(f.spectral_apply(y, |s| 1.0 / s))
}

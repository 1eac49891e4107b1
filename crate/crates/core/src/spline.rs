//! Penalized B-spline smoothing with a residual-sum-of-squares target.
//!
//! The spline has one basis function per data point (interpolation knot
//! placement), and the penalty is the integrated squared second
//! derivative. The smoothing weight is bisected so that the residual sum
//! of squares lands at or just below the requested target.

use crate::error::{Error, Result};

pub const MIN_DEGREE: usize = 2;
pub const MAX_DEGREE: usize = 5;

const LAMBDA_REL_MIN: f64 = 1e-12;
const LAMBDA_REL_MAX: f64 = 1e8;
const BISECTION_STEPS: usize = 200;

/// Result of smoothing one sampled curve.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub values: Vec<f64>,
    pub rss: f64,
    /// Smoothing weight actually used (0 means interpolation).
    pub lambda: f64,
}

/// Symmetric positive definite band matrix, lower band stored row-wise.
#[derive(Clone)]
struct Band {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, w: usize) -> Self {
        Band {
            n,
            w,
            data: vec![0.0; n * (w + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.w);
        i * (self.w + 1) + (i - j)
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[self.idx(i, i)]).sum()
    }

    fn combine(&self, other: &Band, scale: f64) -> Band {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Band {
            n: self.n,
            w: self.w,
            data,
        }
    }

    /// In-place Cholesky; `None` if not positive definite.
    fn cholesky(mut self) -> Option<Band> {
        let (n, w) = (self.n, self.w);
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut sum = self.data[self.idx(i, j)];
                for k in lo.max(j.saturating_sub(w))..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Some(self)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, w) = (self.n, self.w);
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in i.saturating_sub(w)..i {
                s -= self.data[self.idx(i, k)] * z[k];
            }
            z[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..(i + w + 1).min(n) {
                s -= self.data[self.idx(k, i)] * z[k];
            }
            z[i] = s / self.data[self.idx(i, i)];
        }
        z
    }
}

/// Clamped knot vector with interior knots at data points (odd degree) or
/// data midpoints (even degree), giving exactly `x.len()` basis functions.
fn interpolation_knots(x: &[f64], k: usize) -> Vec<f64> {
    let m = x.len();
    let mut t = Vec::with_capacity(m + k + 1);
    t.extend(std::iter::repeat(x[0]).take(k + 1));
    if k % 2 == 1 {
        let h = (k + 1) / 2;
        t.extend_from_slice(&x[h..m - h]);
    } else {
        let h = k / 2;
        t.extend((h..m - h - 1).map(|i| 0.5 * (x[i] + x[i + 1])));
    }
    t.extend(std::iter::repeat(x[m - 1]).take(k + 1));
    t
}

fn find_span(t: &[f64], k: usize, nb: usize, x: f64) -> usize {
    if x >= t[nb] {
        return nb - 1;
    }
    // largest i in [k, nb-1] with t[i] <= x
    let (mut lo, mut hi) = (k, nb);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < t[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Nonzero basis functions at `x` and their derivatives up to `nd`
/// (Piegl & Tiller, algorithm A2.3). `out[d][r]` is the d-th derivative of
/// basis function `span - k + r`.
fn basis_ders(t: &[f64], span: usize, x: f64, k: usize, nd: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; k + 1]; k + 1];
    let mut left = vec![0.0; k + 1];
    let mut right = vec![0.0; k + 1];
    ndu[0][0] = 1.0;
    for j in 1..=k {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; k + 1]; nd + 1];
    for j in 0..=k {
        ders[0][j] = ndu[j][k];
    }
    let mut a = vec![vec![0.0; k + 1]; 2];
    for r in 0..=k {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for d in 1..=nd.min(k) {
            let mut dd = 0.0;
            let rk = r as isize - d as isize;
            let pk = k - d;
            if r >= d {
                let rku = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rku];
                dd = a[s2][0] * ndu[rku][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize {
                d - 1
            } else {
                k - r
            };
            for j in j1..=j2 {
                let col = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][col];
                dd += a[s2][j] * ndu[col][pk];
            }
            if r <= pk {
                a[s2][d] = -a[s1][d - 1] / ndu[pk + 1][r];
                dd += a[s2][d] * ndu[r][pk];
            }
            ders[d][r] = dd;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = k as f64;
    for d in 1..=nd.min(k) {
        for v in ders[d].iter_mut() {
            *v *= fac;
        }
        fac *= (k - d) as f64;
    }
    ders
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Precomputed normal-equation pieces for one grid; reused across rows.
pub(crate) struct SplineSystem {
    x_ascending: bool,
    /// Ascending grid.
    x: Vec<f64>,
    k: usize,
    /// Per data point: first basis index and the k+1 basis values.
    rows: Vec<(usize, Vec<f64>)>,
    gram: Band,
    penalty: Band,
    scale: f64,
    interp: Band,
}

impl SplineSystem {
    pub(crate) fn new(domain: &[f64], k: usize) -> Result<Self> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&k) {
            return Err(Error::Input(format!(
                "spline degree must be in {MIN_DEGREE}..={MAX_DEGREE}, got {k}"
            )));
        }
        let m = domain.len();
        if m < k + 2 {
            return Err(Error::Input(format!(
                "spline of degree {k} needs at least {} points, got {m}",
                k + 2
            )));
        }
        crate::dataset::check_monotone(domain)?;
        let x_ascending = domain[1] > domain[0];
        let x: Vec<f64> = if x_ascending {
            domain.to_vec()
        } else {
            domain.iter().rev().cloned().collect()
        };
        let t = interpolation_knots(&x, k);
        let nb = m;

        let mut gram = Band::zeros(nb, k);
        let mut rows = Vec::with_capacity(m);
        for &xi in &x {
            let span = find_span(&t, k, nb, xi);
            let vals = basis_ders(&t, span, xi, k, 0).swap_remove(0);
            let first = span - k;
            for a in 0..=k {
                for b in 0..=a {
                    gram.add(first + a, first + b, vals[a] * vals[b]);
                }
            }
            rows.push((first, vals));
        }

        let mut penalty = Band::zeros(nb, k);
        for span in k..nb {
            let (a0, a1) = (t[span], t[span + 1]);
            if a1 <= a0 {
                continue;
            }
            let half = 0.5 * (a1 - a0);
            for &(node, weight) in &GAUSS4 {
                let xq = a0 + half * (node + 1.0);
                let d2 = &basis_ders(&t, span, xq, k, 2)[2];
                let first = span - k;
                for a in 0..=k {
                    for b in 0..=a {
                        penalty.add(first + a, first + b, weight * half * d2[a] * d2[b]);
                    }
                }
            }
        }
        let scale = gram.trace() / penalty.trace();
        let interp = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("spline collocation system is singular".into()))?;
        Ok(SplineSystem {
            x_ascending,
            x,
            k,
            rows,
            gram,
            penalty,
            scale,
            interp,
        })
    }

    fn evaluate(&self, coef: &[f64], f: &[f64]) -> (Vec<f64>, f64) {
        let mut values = Vec::with_capacity(f.len());
        let mut rss = 0.0;
        for ((first, vals), &fi) in self.rows.iter().zip(f) {
            let v: f64 = (0..=self.k).map(|a| vals[a] * coef[first + a]).sum();
            rss += (fi - v) * (fi - v);
            values.push(v);
        }
        (values, rss)
    }

    /// Least-squares line: the infinite-penalty limit.
    fn fit_line(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let m = self.x.len() as f64;
        let xm = self.x.iter().sum::<f64>() / m;
        let fm = f.iter().sum::<f64>() / m;
        let sxx: f64 = self.x.iter().map(|x| (x - xm) * (x - xm)).sum();
        let sxf: f64 = self.x.iter().zip(f).map(|(x, v)| (x - xm) * (v - fm)).sum();
        let slope = sxf / sxx;
        let values: Vec<f64> = self.x.iter().map(|x| fm + slope * (x - xm)).collect();
        let rss = values
            .iter()
            .zip(f)
            .map(|(v, fi)| (fi - v) * (fi - v))
            .sum();
        (values, rss)
    }

    fn fit_with(&self, rhs: &[f64], f: &[f64], lambda_rel: f64) -> Result<(Vec<f64>, f64)> {
        let chol = if lambda_rel == 0.0 {
            self.interp.clone()
        } else {
            self.gram
                .combine(&self.penalty, lambda_rel * self.scale)
                .cholesky()
                .ok_or_else(|| {
                    Error::Numerical("penalized spline system is not positive definite".into())
                })?
        };
        let coef = chol.solve(rhs);
        Ok(self.evaluate(&coef, f))
    }

    /// Smooth one curve sampled on the system's grid (in the grid's order).
    pub(crate) fn smooth(&self, f: &[f64], target: f64) -> Result<SplineFit> {
        if !(target >= 0.0) || !target.is_finite() {
            return Err(Error::Input(format!(
                "smoothing target must be a finite nonnegative number, got {target}"
            )));
        }
        if f.len() != self.rows.len() {
            return Err(Error::Dimension(format!(
                "curve has {} points, grid has {}",
                f.len(),
                self.rows.len()
            )));
        }
        let f: Vec<f64> = if self.x_ascending {
            f.to_vec()
        } else {
            f.iter().rev().cloned().collect()
        };
        let mut rhs = vec![0.0; f.len()];
        for ((first, vals), &fi) in self.rows.iter().zip(&f) {
            for a in 0..=self.k {
                rhs[first + a] += vals[a] * fi;
            }
        }

        let finish = |values: Vec<f64>, rss: f64, lambda: f64| {
            let values = if self.x_ascending {
                values
            } else {
                values.into_iter().rev().collect()
            };
            SplineFit {
                values,
                rss,
                lambda,
            }
        };

        let (line_vals, line_rss) = self.fit_line(&f);
        if line_rss <= target {
            return Ok(finish(line_vals, line_rss, f64::INFINITY));
        }
        let (hi_vals, hi_rss) = self.fit_with(&rhs, &f, LAMBDA_REL_MAX)?;
        if hi_rss <= target {
            return Ok(finish(hi_vals, hi_rss, LAMBDA_REL_MAX * self.scale));
        }
        let (lo_vals, lo_rss) = self.fit_with(&rhs, &f, LAMBDA_REL_MIN)?;
        if lo_rss > target {
            let (vals, rss) = self.fit_with(&rhs, &f, 0.0)?;
            return Ok(finish(vals, rss, 0.0));
        }

        // RSS is nondecreasing in lambda; keep the feasible endpoint.
        let (mut lo, mut hi) = (LAMBDA_REL_MIN.ln(), LAMBDA_REL_MAX.ln());
        let mut best = (lo_vals, lo_rss, LAMBDA_REL_MIN);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let lam = mid.exp();
            let (vals, rss) = self.fit_with(&rhs, &f, lam)?;
            if rss <= target {
                lo = mid;
                best = (vals, rss, lam);
                if target - rss <= 1e-9 * target {
                    break;
                }
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(finish(best.0, best.1, best.2 * self.scale))
    }
}

/// Smooth `values` sampled on the strictly monotone grid `domain` with a
/// degree-`degree` penalized spline whose residual sum of squares is at
/// most `target` (or as small as the spline space allows).
pub fn smooth_curve(
    domain: &[f64],
    values: &[f64],
    degree: usize,
    target: f64,
) -> Result<SplineFit> {
    SplineSystem::new(domain, degree)?.smooth(values, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> Vec<f64> {
        (0..m)
            .map(|i| 1.0 + 2.0 * i as f64 / (m - 1) as f64)
            .collect()
    }

    #[test]
    fn partition_of_unity() {
        let x = grid(12);
        for k in MIN_DEGREE..=MAX_DEGREE {
            let t = interpolation_knots(&x, k);
            assert_eq!(t.len(), x.len() + k + 1);
            for &xq in &[1.0, 1.37, 2.0, 2.99, 3.0] {
                let span = find_span(&t, k, x.len(), xq);
                let d = basis_ders(&t, span, xq, k, 2);
                assert!((d[0].iter().sum::<f64>() - 1.0).abs() < 1e-13);
                assert!(d[1].iter().sum::<f64>().abs() < 1e-10);
                assert!(d[2].iter().sum::<f64>().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let x = grid(10);
        let k = 3;
        let t = interpolation_knots(&x, k);
        let coef: Vec<f64> = (0..10).map(|i| ((i * 7 % 5) as f64).sin()).collect();
        let eval = |xq: f64, d: usize| {
            let span = find_span(&t, k, 10, xq);
            let b = basis_ders(&t, span, xq, k, 2);
            (0..=k).map(|a| b[d][a] * coef[span - k + a]).sum::<f64>()
        };
        let xq = 1.61;
        let h = 1e-4;
        let fd = (eval(xq + h, 0) - 2.0 * eval(xq, 0) + eval(xq - h, 0)) / (h * h);
        assert!((fd - eval(xq, 2)).abs() < 1e-4 * (1.0 + fd.abs()));
    }

    #[test]
    fn cubic_is_reproduced_at_zero_target() {
        let x = grid(40);
        let f: Vec<f64> = x.iter().map(|v| 0.5 * v * v * v - v + 2.0).collect();
        let fit = smooth_curve(&x, &f, 3, 0.0).unwrap();
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn line_needs_no_smoothing() {
        let x = grid(30);
        let f: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let fit = smooth_curve(&x, &f, 3, 1e-6).unwrap();
        assert!(fit.rss < 1e-20, "{}", fit.rss);
    }

    #[test]
    fn rss_hits_target() {
        let x = grid(200);
        let f: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v.sin() + 0.01 * ((i * 7919 % 101) as f64 / 50.0 - 1.0))
            .collect();
        let target = 5e-3;
        let fit = smooth_curve(&x, &f, 3, target).unwrap();
        assert!(fit.rss <= target);
        assert!(fit.rss >= 0.99 * target);
    }

    #[test]
    fn decreasing_grid_matches_increasing() {
        let x = grid(50);
        let f: Vec<f64> = x.iter().map(|v| (3.0 * v).cos()).collect();
        let a = smooth_curve(&x, &f, 3, 1e-3).unwrap();
        let xr: Vec<f64> = x.iter().rev().cloned().collect();
        let fr: Vec<f64> = f.iter().rev().cloned().collect();
        let b = smooth_curve(&xr, &fr, 3, 1e-3).unwrap();
        for (u, v) in a.values.iter().zip(b.values.iter().rev()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(smooth_curve(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4], 3, 0.0).is_err());
        assert!(smooth_curve(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0; 5], 3, 0.0).is_ok());
    }

    #[test]
    fn rejects_bad_degree_and_target() {
        let x = grid(10);
        assert!(smooth_curve(&x, &[0.0; 10], 1, 0.0).is_err());
        assert!(smooth_curve(&x, &[0.0; 10], 3, -1.0).is_err());
    }
}

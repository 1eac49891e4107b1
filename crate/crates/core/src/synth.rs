//! Seeded synthetic datasets: parabolic curves and linear responses attached
//! to an existing predictor matrix.
//!
//! All randomness comes from `ChaCha20Rng::seed_from_u64(seed)`, which is
//! platform independent. Draw order is fixed: the per-row amplitudes, then
//! the predictor noise in row-major order, then the response noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::regress::{CoefficientVector, Hyperparam, Method};

/// How an SNR number is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrScale {
    /// Plain power ratio.
    PowerRatio,
    /// `10·log10` of the power ratio.
    #[default]
    Decibel,
}

/// Which power of the clean signal the noise is scaled against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalPower {
    /// Mean square after removing the mean.
    MeanRemoved,
    /// Mean square including the offset.
    #[default]
    Raw,
}

/// Target signal-to-noise level. Infinite means no noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub snr: f64,
    pub scale: SnrScale,
    pub power: SignalPower,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            snr: 50.0,
            scale: SnrScale::default(),
            power: SignalPower::default(),
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec {
            snr: f64::INFINITY,
            ..NoiseSpec::default()
        }
    }

    pub fn ratio(&self) -> f64 {
        match self.scale {
            SnrScale::PowerRatio => self.snr,
            SnrScale::Decibel => 10f64.powf(self.snr / 10.0),
        }
    }

    /// Power of `signal` under this convention.
    pub fn signal_power(&self, signal: &[f64]) -> f64 {
        let n = signal.len() as f64;
        let mean = match self.power {
            SignalPower::MeanRemoved => signal.iter().sum::<f64>() / n,
            SignalPower::Raw => 0.0,
        };
        signal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    /// Noise standard deviation that puts `signal` at the target SNR.
    pub fn noise_std(&self, signal: &[f64]) -> f64 {
        let r = self.ratio();
        if r.is_infinite() {
            0.0
        } else {
            (self.signal_power(signal) / r).sqrt()
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self.scale {
            SnrScale::PowerRatio => self.snr > 0.0,
            SnrScale::Decibel => !self.snr.is_nan() && self.snr > f64::NEG_INFINITY,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} SNR {} is invalid for {:?}",
                self.snr, self.scale
            )))
        }
    }
}

fn add_noise(signal: &mut [f64], std: f64, rng: &mut ChaCha20Rng) {
    for v in signal.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *v += std * e;
    }
}

/// Rows `x_i = a_i (d ⊙ d)` with `a_i ~ N(μ, σ²)` over the grid
/// `d = start, start + step, …` (`p` points), response `y = X*β*` with
/// `β* = 1/p`, then noise on every row of `X` and on `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParabolicSpec {
    pub n: usize,
    pub start: f64,
    pub step: f64,
    pub p: usize,
    pub mu: f64,
    pub sigma: f64,
    pub noise_x: NoiseSpec,
    pub noise_y: NoiseSpec,
    pub seed: u64,
}

impl Default for ParabolicSpec {
    fn default() -> Self {
        ParabolicSpec {
            n: 50,
            start: 1.0,
            step: 0.01,
            p: 201,
            mu: 0.3,
            sigma: 0.3,
            noise_x: NoiseSpec::default(),
            noise_y: NoiseSpec::default(),
            seed: 0,
        }
    }
}

impl ParabolicSpec {
    pub fn domain(&self) -> Vec<f64> {
        // Integer steps keep the grid exact at 1.00, 1.01, ..., 3.00.
        let scale = (1.0 / self.step).round();
        if (scale * self.step - 1.0).abs() < 1e-12 {
            (0..self.p)
                .map(|j| (self.start * scale + j as f64) / scale)
                .collect()
        } else {
            (0..self.p)
                .map(|j| self.start + self.step * j as f64)
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Coefficients in raw predictor units.
    pub true_beta: CoefficientVector,
    /// Noise-free predictors.
    pub clean_x: DMatrix<f64>,
    /// Noise-free response.
    pub clean_y: DVector<f64>,
}

pub fn gen_parabolic(spec: &ParabolicSpec) -> Result<SyntheticData> {
    if spec.n < 2 || spec.p < 2 {
        return Err(Error::Config(format!(
            "parabolic data needs n, p >= 2, got {}x{}",
            spec.n, spec.p
        )));
    }
    if !(spec.step > 0.0) || !(spec.sigma >= 0.0) || !spec.mu.is_finite() {
        return Err(Error::Config(
            "parabolic step must be positive and sigma nonnegative".into(),
        ));
    }
    spec.noise_x.validate("predictor")?;
    spec.noise_y.validate("response")?;

    let d = spec.domain();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let amp = Normal::new(spec.mu, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let a: Vec<f64> = (0..spec.n).map(|_| amp.sample(&mut rng)).collect();

    let clean_x = DMatrix::from_fn(spec.n, spec.p, |i, j| a[i] * (d[j] * d[j]));
    let mut x = clean_x.clone();
    for i in 0..spec.n {
        let mut row: Vec<f64> = clean_x.row(i).iter().cloned().collect();
        let std = spec.noise_x.noise_std(&row);
        add_noise(&mut row, std, &mut rng);
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }

    let beta = DVector::from_element(spec.p, 1.0 / spec.p as f64);
    let clean_y = &clean_x * &beta;
    let mut y: Vec<f64> = clean_y.iter().cloned().collect();
    let std = spec.noise_y.noise_std(&y);
    add_noise(&mut y, std, &mut rng);

    let dataset = Dataset::new(x, DVector::from_vec(y))?.with_domain(d)?;
    Ok(SyntheticData {
        dataset,
        true_beta: CoefficientVector::new(beta, Method::True, Hyperparam::None, None)?,
        clean_x,
        clean_y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    /// `β*_j = 1/p`.
    #[default]
    Constant,
    /// `β*_j` is the mean of column `j` of the raw predictors.
    ColumnMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticResponseSpec {
    pub kind: ResponseKind,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for SyntheticResponseSpec {
    fn default() -> Self {
        SyntheticResponseSpec {
            kind: ResponseKind::Constant,
            noise: NoiseSpec::default(),
            seed: 0,
        }
    }
}

/// Replace the response of the raw dataset `d` with `y = Xβ* + noise`.
pub fn attach_synthetic_response(
    d: &Dataset,
    spec: &SyntheticResponseSpec,
) -> Result<SyntheticData> {
    if d.transform().is_some() {
        return Err(Error::Input(
            "synthetic responses need the raw predictors".into(),
        ));
    }
    spec.noise.validate("response")?;
    let (n, p) = (d.n(), d.p());
    let beta = match spec.kind {
        ResponseKind::Constant => DVector::from_element(p, 1.0 / p as f64),
        ResponseKind::ColumnMean => DVector::from_fn(p, |j, _| d.x().column(j).sum() / n as f64),
    };
    let clean_y = d.x() * &beta;
    let mut y: Vec<f64> = clean_y.iter().cloned().collect();
    let std = spec.noise.noise_std(&y);
    add_noise(&mut y, std, &mut ChaCha20Rng::seed_from_u64(spec.seed));
    let dataset = d.clone().with_response(DVector::from_vec(y))?;
    Ok(SyntheticData {
        dataset,
        true_beta: CoefficientVector::new(beta, Method::True, Hyperparam::None, None)?,
        clean_x: d.x().clone(),
        clean_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{fit_apply, Scheme};
    use crate::regress::fit_min_norm;

    #[test]
    fn default_shape_and_grid() {
        let s = gen_parabolic(&ParabolicSpec::default()).unwrap();
        assert_eq!((s.dataset.n(), s.dataset.p()), (50, 201));
        let d = s.dataset.domain().unwrap();
        assert_eq!((d[0], d[100], d[200]), (1.0, 2.0, 3.0));
        assert!(s.true_beta.beta.iter().all(|&b| b == 1.0 / 201.0));
    }

    #[test]
    fn clean_rows_are_scaled_parabolas() {
        let s = gen_parabolic(&ParabolicSpec::default()).unwrap();
        let d = s.dataset.domain().unwrap();
        for i in 0..50 {
            let a = s.clean_x[(i, 0)];
            for j in 0..201 {
                assert_eq!(s.clean_x[(i, j)], a * (d[j] * d[j]));
            }
        }
    }

    #[test]
    fn noiseless_is_exact_and_min_norm_matches_up_to_nullspace() {
        let spec = ParabolicSpec {
            noise_x: NoiseSpec::noiseless(),
            noise_y: NoiseSpec::noiseless(),
            ..ParabolicSpec::default()
        };
        let s = gen_parabolic(&spec).unwrap();
        assert_eq!(s.dataset.x(), &s.clean_x);
        assert_eq!(s.dataset.y(), &(&s.clean_x * &s.true_beta.beta));
        let (_, t) = fit_apply(&s.dataset, Scheme::Center).unwrap();
        let b = fit_min_norm(&t).unwrap();
        let diff = t.x() * (&b.beta - &s.true_beta.beta);
        assert!(diff.amax() < 1e-10);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_parabolic(&ParabolicSpec::default()).unwrap();
        let b = gen_parabolic(&ParabolicSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_parabolic(&ParabolicSpec {
            seed: 1,
            ..ParabolicSpec::default()
        })
        .unwrap();
        assert_ne!(a.dataset.x(), c.dataset.x());
    }

    #[test]
    fn realized_snr_tracks_target() {
        for scale in [SnrScale::PowerRatio, SnrScale::Decibel] {
            for power in [SignalPower::MeanRemoved, SignalPower::Raw] {
                let noise = NoiseSpec {
                    snr: 50.0,
                    scale,
                    power,
                };
                let mut ratios = Vec::new();
                for seed in 0..10 {
                    let spec = ParabolicSpec {
                        noise_x: noise,
                        seed,
                        ..ParabolicSpec::default()
                    };
                    let s = gen_parabolic(&spec).unwrap();
                    for i in 0..50 {
                        let clean: Vec<f64> = s.clean_x.row(i).iter().cloned().collect();
                        let e: Vec<f64> =
                            (0..201).map(|j| s.dataset.x()[(i, j)] - clean[j]).collect();
                        let pe = e.iter().map(|v| v * v).sum::<f64>() / 201.0;
                        ratios.push(noise.signal_power(&clean) / pe);
                    }
                }
                let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                let target = noise.ratio();
                assert!(
                    (mean / target - 1.0).abs() < 0.05,
                    "{scale:?} {power:?}: {mean} vs {target}"
                );
            }
        }
    }

    #[test]
    fn constant_response() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let d = Dataset::unlabeled(x.clone()).unwrap();
        let spec = SyntheticResponseSpec {
            noise: NoiseSpec::noiseless(),
            ..SyntheticResponseSpec::default()
        };
        let s = attach_synthetic_response(&d, &spec).unwrap();
        for i in 0..3 {
            assert!((s.dataset.y()[i] - x.row(i).sum() / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn column_mean_response_identical_rows() {
        let r = [1.0, -2.0, 0.5];
        let x = DMatrix::from_fn(4, 3, |_, j| r[j]);
        let spec = SyntheticResponseSpec {
            kind: ResponseKind::ColumnMean,
            noise: NoiseSpec::noiseless(),
            seed: 0,
        };
        let s = attach_synthetic_response(&Dataset::unlabeled(x).unwrap(), &spec).unwrap();
        assert_eq!(s.true_beta.beta.as_slice(), &r);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        assert!(s.dataset.y().iter().all(|&v| v == rr));
    }

    #[test]
    fn response_snr_within_five_percent() {
        let spec = ParabolicSpec::default();
        let base = gen_parabolic(&spec).unwrap().dataset;
        let noise = NoiseSpec {
            snr: 50.0,
            scale: SnrScale::PowerRatio,
            power: SignalPower::MeanRemoved,
        };
        let mut ratios = Vec::new();
        for seed in 0..200 {
            let s = attach_synthetic_response(
                &base,
                &SyntheticResponseSpec {
                    kind: ResponseKind::Constant,
                    noise,
                    seed,
                },
            )
            .unwrap();
            let e = s.dataset.y() - &s.clean_y;
            let clean: Vec<f64> = s.clean_y.iter().cloned().collect();
            ratios.push(noise.signal_power(&clean) / (e.norm_squared() / 50.0));
        }
        // Averaging the noise power first keeps the estimator unbiased.
        let mean_inv = ratios.iter().map(|r| 1.0 / r).sum::<f64>() / ratios.len() as f64;
        assert!((1.0 / mean_inv / 50.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gen_parabolic(&ParabolicSpec {
            n: 1,
            ..ParabolicSpec::default()
        })
        .is_err());
        let bad = NoiseSpec {
            snr: -1.0,
            scale: SnrScale::PowerRatio,
            power: SignalPower::Raw,
        };
        assert!(gen_parabolic(&ParabolicSpec {
            noise_y: bad,
            ..ParabolicSpec::default()
        })
        .is_err());
    }
}

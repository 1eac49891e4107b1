//! Per-column signal-to-noise estimate from row-wise spline smoothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::preprocess::column_moments;
use crate::spline::SplineSystem;

/// Whether the per-row mean of the smoothed curve counts as signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalOffset {
    #[default]
    Removed,
    Included,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrProfile {
    pub snr_db: Vec<f64>,
    pub snr_ratio: Vec<f64>,
    pub signal_power: Vec<f64>,
    pub noise_power: Vec<f64>,
    pub column_mean: Vec<f64>,
    pub column_std: Vec<f64>,
}

/// Smooth every row of `d` over its domain grid and report, per column,
/// the mean squared spline value (signal) over the mean squared residual
/// (noise) across rows.
pub fn snr_profile(
    d: &Dataset,
    smooth_target: f64,
    degree: usize,
    offset: SignalOffset,
) -> Result<SnrProfile> {
    let domain = d
        .domain()
        .ok_or_else(|| Error::Input("SNR profile needs a domain grid".into()))?;
    let system = SplineSystem::new(domain, degree)?;
    let x = d.x();
    let rows: Vec<Vec<f64>> = (0..d.n())
        .map(|i| x.row(i).iter().cloned().collect())
        .collect();
    let fits = rows
        .par_iter()
        .map(|row| system.smooth(row, smooth_target))
        .collect::<Result<Vec<_>>>()?;

    let (n, p) = (d.n() as f64, d.p());
    let mut signal = vec![0.0; p];
    let mut noise = vec![0.0; p];
    for (row, fit) in rows.iter().zip(&fits) {
        let shift = match offset {
            SignalOffset::Removed => fit.values.iter().sum::<f64>() / p as f64,
            SignalOffset::Included => 0.0,
        };
        for j in 0..p {
            let s = fit.values[j] - shift;
            let r = row[j] - fit.values[j];
            signal[j] += s * s;
            noise[j] += r * r;
        }
    }
    signal.iter_mut().for_each(|v| *v /= n);
    noise.iter_mut().for_each(|v| *v /= n);
    let snr_ratio: Vec<f64> = signal
        .iter()
        .zip(&noise)
        .map(|(&s, &e)| if e > 0.0 { s / e } else { f64::INFINITY })
        .collect();
    let snr_db = snr_ratio.iter().map(|r| 10.0 * r.log10()).collect();
    let (column_mean, column_std) = column_moments(x);
    Ok(SnrProfile {
        snr_db,
        snr_ratio,
        signal_power: signal,
        noise_power: noise,
        column_mean,
        column_std,
    })
}

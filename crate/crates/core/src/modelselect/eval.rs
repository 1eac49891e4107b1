use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::regress::{predict, CoefficientVector};

/// Membership test on the response in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetRule {
    AtMost(f64),
    Above(f64),
}

impl SubsetRule {
    pub fn contains(&self, y: f64) -> bool {
        match *self {
            SubsetRule::AtMost(t) => y <= t,
            SubsetRule::Above(t) => y > t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub rule: SubsetRule,
}

impl SubsetSpec {
    pub fn new(name: impl Into<String>, rule: SubsetRule) -> Self {
        SubsetSpec {
            name: name.into(),
            rule,
        }
    }

    /// Low/high split of a response at `threshold`.
    pub fn low_high(threshold: f64) -> Vec<SubsetSpec> {
        vec![
            SubsetSpec::new("low", SubsetRule::AtMost(threshold)),
            SubsetSpec::new("high", SubsetRule::Above(threshold)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub split: String,
    /// `"all"` or a subset name.
    pub subset: String,
    pub count: usize,
    /// Absent for an empty subset.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn rmse(&self, split: &str, subset: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.subset == subset)
            .and_then(|r| r.rmse)
    }

    pub fn count(&self, split: &str, subset: &str) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.subset == subset)
            .map(|r| r.count)
    }
}

fn rmse_of(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let ss: f64 = pairs.iter().map(|(p, y)| (p - y) * (p - y)).sum();
    Some((ss / pairs.len() as f64).sqrt())
}

/// RMSE of `beta` on each named split, overall and per subset, in the
/// original response units (response transform inverted).
///
/// Every split must carry the preprocessing `beta` was fit under.
pub fn evaluate(
    beta: &CoefficientVector,
    splits: &[(&str, &Dataset)],
    subsets: &[SubsetSpec],
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (name, d) in splits {
        if beta.preprocessing.as_ref() != d.transform() {
            return Err(Error::Provenance {
                coefficients: beta
                    .preprocessing
                    .as_ref()
                    .map_or_else(|| "raw".into(), |s| s.scheme().to_string()),
                data: d
                    .transform()
                    .map_or_else(|| "raw".into(), |s| s.scheme().to_string()),
            });
        }
        let rt = d.response_transform();
        let pred = predict(beta, d, false)?;
        let pairs: Vec<(f64, f64)> = pred
            .iter()
            .zip(d.y_original().iter())
            .map(|(&p, &y)| (rt.inverse(p), y))
            .collect();
        rows.push(EvalRow {
            split: name.to_string(),
            subset: "all".into(),
            count: pairs.len(),
            rmse: rmse_of(&pairs),
        });
        for s in subsets {
            let sub: Vec<(f64, f64)> = pairs
                .iter()
                .filter(|(_, y)| s.rule.contains(*y))
                .cloned()
                .collect();
            rows.push(EvalRow {
                split: name.to_string(),
                subset: s.name.clone(),
                count: sub.len(),
                rmse: rmse_of(&sub),
            });
        }
    }
    Ok(EvalReport {
        model: beta.label(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ResponseTransform;
    use crate::preprocess::{apply_preprocess, fit_apply, Scheme};
    use crate::regress::{fit_min_norm, Hyperparam, Method};
    use nalgebra::{DMatrix, DVector};

    fn cycle_data() -> Dataset {
        let x = DMatrix::from_fn(6, 8, |i, j| ((i * 37 + j * 101 + i * j * 17) % 29) as f64);
        let y = DVector::from_vec(vec![800.0, 1000.0, 1200.0, 1500.0, 2000.0, 900.0]);
        Dataset::new(x, y)
            .unwrap()
            .with_response_transform(ResponseTransform::Log10)
            .unwrap()
    }

    #[test]
    fn perfect_log_predictions_give_zero_cycle_rmse() {
        let (_, t) = fit_apply(&cycle_data(), Scheme::Center).unwrap();
        let b = fit_min_norm(&t).unwrap();
        let r = evaluate(&b, &[("train", &t)], &SubsetSpec::low_high(1200.0)).unwrap();
        assert!(r.rmse("train", "all").unwrap() < 1e-8);
        assert_eq!(r.count("train", "low"), Some(4));
        assert_eq!(r.count("train", "high"), Some(2));
    }

    #[test]
    fn subsets_partition_and_empty_is_absent() {
        let (state, t) = fit_apply(&cycle_data(), Scheme::Center).unwrap();
        let b = CoefficientVector::new(
            DVector::zeros(8),
            Method::Custom,
            Hyperparam::None,
            Some(state.clone()),
        )
        .unwrap();
        let test = apply_preprocess(&state, &cycle_data().select_rows(&[0, 1])).unwrap();
        let r = evaluate(
            &b,
            &[("train", &t), ("test", &test)],
            &SubsetSpec::low_high(1200.0),
        )
        .unwrap();
        for split in ["train", "test"] {
            let total = r.count(split, "all").unwrap();
            assert_eq!(
                r.count(split, "low").unwrap() + r.count(split, "high").unwrap(),
                total
            );
        }
        assert_eq!(r.count("test", "high"), Some(0));
        assert_eq!(r.rmse("test", "high"), None);
        // Zero coefficients predict the geometric mean of the training cycles.
        let gm = 10f64.powf(cycle_data().y().mean());
        let expect = (((800.0 - gm).powi(2) + (1000.0 - gm).powi(2)) / 2.0).sqrt();
        assert!((r.rmse("test", "all").unwrap() - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn provenance_mismatch_is_refused() {
        let (_, t) = fit_apply(&cycle_data(), Scheme::Center).unwrap();
        let (_, z) = fit_apply(&cycle_data(), Scheme::Zscore).unwrap();
        let b = fit_min_norm(&t).unwrap();
        assert!(matches!(
            evaluate(&b, &[("z", &z)], &[]),
            Err(Error::Provenance { .. })
        ));
    }
}

//! TOML run configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ResponseTransform;
use crate::error::{Error, Result};
use crate::modelselect::{Estimator, Rule};
use crate::nullspace::SearchConfig;
use crate::preprocess::Scheme;
use crate::regress::SolverConfig;
use crate::snr::SignalOffset;
use crate::synth::{ParabolicSpec, SyntheticResponseSpec};

/// Id under which the generating coefficients of a synthetic source are
/// available to nullspace comparisons.
pub const TRUTH_ID: &str = "truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, rename = "model")]
    pub models: Vec<ModelSpec>,
    #[serde(default, rename = "nullspace")]
    pub comparisons: Vec<ComparisonSpec>,
    #[serde(default)]
    pub snr: Option<SnrSettings>,
}

fn default_scheme() -> Scheme {
    Scheme::Center
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Generated parabolic curves; `ParabolicSpec::seed` is replaced by
    /// the run seed.
    Parabolic(ParabolicSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub x: PathBuf,
    /// Required unless `synthetic_response` is set.
    #[serde(default)]
    pub response: Option<PathBuf>,
    #[serde(default)]
    pub response_transform: ResponseTransform,
    /// Replace the response with `Xβ* + noise`; its seed is the run seed.
    #[serde(default)]
    pub synthetic_response: Option<SyntheticResponseSpec>,
    #[serde(default)]
    pub test: Vec<SplitSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSource {
    pub name: String,
    pub x: PathBuf,
    pub response: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_train_name")]
    pub train_name: String,
    /// Low/high subsets at this response value (original units).
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_train_name() -> String {
    "train".into()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_name: default_train_name(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub rule: Rule,
}

fn default_folds() -> usize {
    5
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: default_folds(),
            rule: Rule::default(),
        }
    }
}

/// One estimator. Without `lambda`/`components` the hyperparameter is
/// chosen by cross-validation over `grid` (or the default grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub estimator: Estimator,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub components: Option<usize>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub rule: Option<Rule>,
}

impl ModelSpec {
    pub fn needs_cv(&self) -> bool {
        self.estimator != Estimator::MinNorm && self.lambda.is_none() && self.components.is_none()
    }
}

/// Where `β_B` comes from. Constants and files are in raw predictor units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaSource {
    Model(String),
    Constant(f64),
    /// One coefficient per line; an optional non-numeric first line is a header.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub a: String,
    pub b: BetaSource,
    /// Fixed `γ`; mutually exclusive with `c`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// NRMSE tolerance for the `γ` search.
    #[serde(default)]
    pub c: Option<f64>,
    /// Check the NRMSE constraint on this test split instead of training.
    #[serde(default)]
    pub holdout: Option<String>,
    #[serde(default)]
    pub search: SearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSettings {
    #[serde(default = "default_smooth_target")]
    pub smooth_target: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub offset: SignalOffset,
}

fn default_smooth_target() -> f64 {
    1e-6
}

fn default_degree() -> usize {
    3
}

impl Default for SnrSettings {
    fn default() -> Self {
        SnrSettings {
            smooth_target: default_smooth_target(),
            degree: default_degree(),
            offset: SignalOffset::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = self.out.as_mut() {
            fix(out);
        }
        if let DataSource::Csv(c) = &mut self.data {
            fix(&mut c.x);
            if let Some(r) = c.response.as_mut() {
                fix(r);
            }
            for t in &mut c.test {
                fix(&mut t.x);
                fix(&mut t.response);
            }
        }
        for cmp in &mut self.comparisons {
            if let BetaSource::File(p) = &mut cmp.b {
                fix(p);
            }
        }
    }

    pub fn has_truth(&self) -> bool {
        match &self.data {
            DataSource::Parabolic(_) => true,
            DataSource::Csv(c) => c.synthetic_response.is_some(),
        }
    }

    pub fn test_splits(&self) -> &[SplitSource] {
        match &self.data {
            DataSource::Parabolic(_) => &[],
            DataSource::Csv(c) => &c.test,
        }
    }

    /// Structural checks. `need_models` is false for verbs that never fit.
    pub fn validate(&self, need_models: bool) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if need_models && self.models.is_empty() {
            return bad("no models configured; add at least one [[model]]".into());
        }
        if let DataSource::Csv(c) = &self.data {
            if c.response.is_none() && c.synthetic_response.is_none() {
                return bad("csv data needs `response` or `synthetic_response`".into());
            }
        }
        if self.cv.folds < 2 {
            return bad(format!(
                "cv.folds must be at least 2, got {}",
                self.cv.folds
            ));
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            if m.id == TRUTH_ID {
                return bad(format!("model id '{TRUTH_ID}' is reserved"));
            }
            if !ids.insert(m.id.as_str()) {
                return bad(format!("duplicate model id '{}'", m.id));
            }
            let lambda_family = matches!(
                m.estimator,
                Estimator::Ridge | Estimator::Lasso | Estimator::FusedLasso
            );
            let counted = matches!(m.estimator, Estimator::Pcr | Estimator::Pls);
            if m.lambda.is_some() && !lambda_family {
                return bad(format!("model '{}': {} takes no lambda", m.id, m.estimator));
            }
            if m.components.is_some() && !counted {
                return bad(format!(
                    "model '{}': {} takes no components",
                    m.id, m.estimator
                ));
            }
            if let Some(g) = &m.grid {
                if g.is_empty() {
                    return bad(format!("model '{}': empty grid", m.id));
                }
                if counted && g.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                    return bad(format!(
                        "model '{}': component grid must hold positive integers",
                        m.id
                    ));
                }
            }
        }
        let splits: HashSet<&str> = self.test_splits().iter().map(|s| s.name.as_str()).collect();
        if splits.len() != self.test_splits().len()
            || splits.contains(self.eval.train_name.as_str())
        {
            return bad("split names must be unique".into());
        }
        let resolves = |id: &str| ids.contains(id) || (id == TRUTH_ID && self.has_truth());
        for (k, cmp) in self.comparisons.iter().enumerate() {
            if !resolves(&cmp.a) {
                return bad(format!("nullspace[{k}]: unknown model '{}'", cmp.a));
            }
            if let BetaSource::Model(b) = &cmp.b {
                if !resolves(b) {
                    return bad(format!("nullspace[{k}]: unknown model '{b}'"));
                }
            }
            match (cmp.gamma, cmp.c) {
                (Some(_), Some(_)) | (None, None) => {
                    return bad(format!(
                        "nullspace[{k}]: set exactly one of `gamma` and `c`"
                    ));
                }
                (Some(g), None) if !(g >= 0.0) => {
                    return bad(format!("nullspace[{k}]: gamma must be >= 0"))
                }
                (None, Some(c)) if !(c > 0.0) => {
                    return bad(format!("nullspace[{k}]: c must be > 0"))
                }
                _ => {}
            }
            if let Some(h) = &cmp.holdout {
                if !splits.contains(h.as_str()) {
                    return bad(format!("nullspace[{k}]: unknown holdout split '{h}'"));
                }
            }
        }
        Ok(())
    }
}

//! Run orchestration: load or generate data, fit models, compare them up to
//! the nullspace and write every artifact under one output directory.

use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;

use super::config::{BetaSource, ComparisonSpec, DataSource, ModelSpec, RunConfig, TRUTH_ID};
use super::plot::{LinePlot, Series, PALETTE};
use super::table::{
    fmt_f64, load_csv, load_dataset, save_csv, save_response, write_rows, write_text,
};
use crate::dataset::{Dataset, ResponseTransform};
use crate::error::{Error, Result};
use crate::linalg::svd_factor;
use crate::modelselect::{
    cross_validate, default_grid, evaluate, fit_estimator, CvConfig, CvResult, Estimator,
    EvalReport, Grid, HyperValue, SubsetSpec,
};
use crate::nullspace::{
    compare_at_gamma_factored, select_gamma_factored, Gamma, NullspaceComparison,
};
use crate::preprocess::{apply_preprocess, fit_apply, PreprocessState};
use crate::regress::CoefficientVector;
use crate::snr::{snr_profile, SnrProfile};
use crate::synth::{attach_synthetic_response, gen_parabolic, SyntheticResponseSpec};

/// What a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    /// Fitted coefficients, evaluation table and coefficient plot.
    Fit,
    /// Cross-validation curves for every tunable model.
    Cv,
    /// Fits plus the configured nullspace comparisons.
    Nullspace,
    /// Per-column SNR profile of the training predictors.
    Snr,
    /// The training (and test) data as canonical CSV.
    Synth,
    /// Everything above that the configuration asks for.
    Report,
}

impl Verb {
    fn fits(self) -> bool {
        matches!(self, Verb::Fit | Verb::Nullspace | Verb::Report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Written files, relative to `out_dir`, in write order.
    pub artifacts: Vec<PathBuf>,
    /// `(model id, hyperparameter label)` for every fitted model.
    pub models: Vec<(String, String)>,
}

struct Split {
    name: String,
    raw: Dataset,
    prepared: Dataset,
}

struct Loaded {
    train_raw: Dataset,
    train: Dataset,
    state: PreprocessState,
    tests: Vec<Split>,
    truth: Option<CoefficientVector>,
}

struct Writer {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn rows(&mut self, rel: &str, rows: &[Vec<String>]) -> Result<()> {
        write_rows(&self.root.join(rel), rows)?;
        self.written.push(rel.into());
        Ok(())
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        write_text(&self.root.join(rel), text)?;
        self.written.push(rel.into());
        Ok(())
    }

    fn dataset(&mut self, stem: &str, d: &Dataset) -> Result<()> {
        let x = format!("data/{stem}_x.csv");
        let y = format!("data/{stem}_y.csv");
        save_csv(d, &self.root.join(&x))?;
        save_response(d, &self.root.join(&y), "y")?;
        self.written.push(x.into());
        self.written.push(y.into());
        Ok(())
    }
}

fn synthetic_response(
    cfg: &RunConfig,
    spec: &SyntheticResponseSpec,
    offset: u64,
) -> SyntheticResponseSpec {
    SyntheticResponseSpec {
        seed: cfg.seed.wrapping_add(offset),
        ..*spec
    }
}

fn load(cfg: &RunConfig, need_response: bool) -> Result<Loaded> {
    let (train_raw, truth, tests_raw) = match &cfg.data {
        DataSource::Parabolic(spec) => {
            let spec = crate::synth::ParabolicSpec {
                seed: cfg.seed,
                ..spec.clone()
            };
            let s = gen_parabolic(&spec)?;
            (s.dataset, Some(s.true_beta), Vec::new())
        }
        DataSource::Csv(c) => {
            if c.synthetic_response.is_some() && c.response_transform != ResponseTransform::Identity
            {
                return Err(Error::Config(
                    "a synthetic response cannot take a response transform".into(),
                ));
            }
            let read = |x: &Path, y: Option<&Path>| -> Result<Dataset> {
                let d = match (y, need_response && c.synthetic_response.is_none()) {
                    (Some(y), _) if c.synthetic_response.is_none() => load_dataset(x, y)?,
                    (None, true) => {
                        return Err(Error::Config("csv data needs a response file".into()))
                    }
                    _ => load_csv(x)?,
                };
                d.with_response_transform(c.response_transform)
            };
            let mut train = read(&c.x, c.response.as_deref())?;
            let mut tests = c
                .test
                .iter()
                .map(|t| Ok((t.name.clone(), read(&t.x, Some(&t.response))?)))
                .collect::<Result<Vec<_>>>()?;
            let mut truth = None;
            if let Some(spec) = &c.synthetic_response {
                let s = attach_synthetic_response(&train, &synthetic_response(cfg, spec, 0))?;
                train = s.dataset;
                truth = Some(s.true_beta);
                for (k, (_, d)) in tests.iter_mut().enumerate() {
                    let s =
                        attach_synthetic_response(d, &synthetic_response(cfg, spec, k as u64 + 1))?;
                    // The test split shares the training coefficients.
                    let y = d.x() * &truth.as_ref().expect("set above").beta;
                    let noise = &s.dataset.y().clone() - &s.clean_y;
                    *d = s.dataset.with_response(y + noise)?;
                }
            }
            (train, truth, tests)
        }
    };
    for (name, d) in &tests_raw {
        if d.p() != train_raw.p() {
            return Err(Error::Dimension(format!(
                "split '{name}' has {} predictors, training has {}",
                d.p(),
                train_raw.p()
            )));
        }
    }
    let (state, train) = fit_apply(&train_raw, cfg.scheme)?;
    let tests = tests_raw
        .into_iter()
        .map(|(name, raw)| {
            let prepared = apply_preprocess(&state, &raw)?;
            Ok(Split {
                name,
                raw,
                prepared,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = truth.map(|t| t.expressed_in(&state)).transpose()?;
    Ok(Loaded {
        train_raw,
        train,
        state,
        tests,
        truth,
    })
}

fn grid_for(spec: &ModelSpec, cfg: &RunConfig, d: &Dataset) -> Result<Grid> {
    match &spec.grid {
        Some(g) if matches!(spec.estimator, Estimator::Pcr | Estimator::Pls) => {
            Ok(Grid::Components(g.iter().map(|&v| v as usize).collect()))
        }
        Some(g) => Ok(Grid::Lambda(g.clone())),
        None => default_grid(spec.estimator, d, cfg.scheme, cfg.cv.folds),
    }
}

fn run_cv(spec: &ModelSpec, cfg: &RunConfig, d: &Dataset) -> Result<CvResult> {
    let grid = grid_for(spec, cfg, d)?;
    let cv_cfg = CvConfig {
        folds: cfg.cv.folds,
        seed: cfg.seed,
        rule: spec.rule.unwrap_or(cfg.cv.rule),
        scheme: cfg.scheme,
        solver: cfg.solver.clone(),
    };
    info!(
        "cross-validating {} over {} grid values",
        spec.id,
        grid.len()
    );
    cross_validate(d, spec.estimator, &grid, &cv_cfg)
}

fn fixed_value(spec: &ModelSpec) -> Option<HyperValue> {
    match (spec.estimator, spec.lambda, spec.components) {
        (Estimator::MinNorm, _, _) => Some(HyperValue::None),
        (_, Some(l), _) => Some(HyperValue::Lambda(l)),
        (_, _, Some(m)) => Some(HyperValue::Components(m)),
        _ => None,
    }
}

fn read_beta_file(path: &Path, p: usize) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut values = Vec::with_capacity(p);
    for (k, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if k == 0 && values.is_empty() => continue,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: k + 1,
                    column: 1,
                    message: format!("'{cell}' is not a finite number"),
                })
            }
        }
    }
    if values.len() != p {
        return Err(Error::Dimension(format!(
            "{} holds {} coefficients, data has {p} predictors",
            path.display(),
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn axis(d: &Dataset) -> (Vec<f64>, &'static str) {
    match d.domain() {
        Some(g) => (g.to_vec(), "domain"),
        None => ((0..d.p()).map(|j| j as f64).collect(), "column index"),
    }
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

fn column_header(lead: &[&str], d: &Dataset) -> Vec<Vec<String>> {
    let mut head: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    head.extend((0..d.p()).map(|j| format!("x{j}")));
    let mut rows = vec![head];
    if let Some(grid) = d.domain() {
        let mut r = vec!["domain".to_string()];
        r.extend(std::iter::repeat(String::new()).take(lead.len() - 1));
        r.extend(grid.iter().map(|&v| fmt_f64(v)));
        rows.push(r);
    }
    rows
}

fn eval_rows(reports: &[EvalReport]) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["model", "split", "subset", "count", "rmse"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()];
    for r in reports {
        for row in &r.rows {
            rows.push(vec![
                r.model.clone(),
                row.split.clone(),
                row.subset.clone(),
                row.count.to_string(),
                row.rmse.map_or_else(String::new, fmt_f64),
            ]);
        }
    }
    rows
}

fn cv_rows(results: &[(String, CvResult)]) -> Vec<Vec<String>> {
    let folds = results
        .iter()
        .map(|(_, r)| r.fold_errors.len())
        .max()
        .unwrap_or(0);
    let mut head: Vec<String> = [
        "model",
        "estimator",
        "index",
        "value",
        "mean_rmse",
        "se",
        "folds_ok",
        "chosen",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    head.extend((0..folds).map(|k| format!("fold{k}")));
    let mut rows = vec![head];
    for (id, r) in results {
        for i in 0..r.grid.len() {
            let value = r.grid.value(i);
            let mut tags = Vec::new();
            if value == r.chosen_min {
                tags.push("min");
            }
            if value == r.chosen_1se {
                tags.push("one-se");
            }
            let errs: Vec<Option<f64>> = r.fold_errors.iter().map(|f| f[i]).collect();
            let mut row = vec![
                id.clone(),
                r.estimator.to_string(),
                i.to_string(),
                value.to_string(),
                fmt_f64(r.mean_curve[i]),
                fmt_f64(r.std_curve[i]),
                errs.iter().flatten().count().to_string(),
                tags.join("+"),
            ];
            row.extend(errs.iter().map(|e| e.map_or_else(String::new, fmt_f64)));
            rows.push(row);
        }
    }
    rows
}

fn cv_plot(id: &str, r: &CvResult) -> String {
    let (xs, log) = match &r.grid {
        Grid::Lambda(v) => (v.clone(), true),
        Grid::Components(v) => (v.iter().map(|&m| m as f64).collect(), false),
    };
    let label = if log { "lambda" } else { "components" };
    let mut plot = LinePlot::new(
        format!("{id}: {} CV (chosen {})", r.estimator, r.chosen()),
        label,
        "held-out RMSE",
    );
    if log {
        plot = plot.log_x();
    }
    let upper: Vec<f64> = r
        .mean_curve
        .iter()
        .zip(&r.std_curve)
        .map(|(m, s)| m + s)
        .collect();
    let lower: Vec<f64> = r
        .mean_curve
        .iter()
        .zip(&r.std_curve)
        .map(|(m, s)| m - s)
        .collect();
    plot.push(Series::new(
        "mean",
        xs.clone(),
        r.mean_curve.clone(),
        PALETTE[0],
    ));
    plot.push(Series::new("mean + se", xs.clone(), upper, PALETTE[7]).dashed());
    plot.push(Series::new("mean - se", xs, lower, PALETTE[7]).dashed());
    plot.render()
}

fn snr_rows(d: &Dataset, s: &SnrProfile) -> Vec<Vec<String>> {
    let (grid, _) = axis(d);
    let mut rows = vec![[
        "column",
        "domain",
        "snr_db",
        "snr_ratio",
        "signal_power",
        "noise_power",
        "column_mean",
        "column_std",
    ]
    .iter()
    .map(|v| v.to_string())
    .collect::<Vec<_>>()];
    for j in 0..d.p() {
        rows.push(vec![
            j.to_string(),
            fmt_f64(grid[j]),
            fmt_f64(s.snr_db[j]),
            fmt_f64(s.snr_ratio[j]),
            fmt_f64(s.signal_power[j]),
            fmt_f64(s.noise_power[j]),
            fmt_f64(s.column_mean[j]),
            fmt_f64(s.column_std[j]),
        ]);
    }
    rows
}

struct Fitted {
    id: String,
    beta: CoefficientVector,
}

fn resolve<'a>(
    id: &str,
    fitted: &'a [Fitted],
    truth: Option<&'a CoefficientVector>,
) -> Result<&'a CoefficientVector> {
    if id == TRUTH_ID {
        return truth
            .ok_or_else(|| Error::Config("no true coefficients for this data source".into()));
    }
    fitted
        .iter()
        .find(|f| f.id == id)
        .map(|f| &f.beta)
        .ok_or_else(|| Error::Config(format!("unknown model '{id}'")))
}

fn compare(
    k: usize,
    spec: &ComparisonSpec,
    data: &Loaded,
    f: &crate::linalg::SvdFactors,
    fitted: &[Fitted],
) -> Result<(String, NullspaceComparison)> {
    let a = resolve(&spec.a, fitted, data.truth.as_ref())?;
    let (b_label, b) = match &spec.b {
        BetaSource::Model(id) => (
            id.clone(),
            resolve(id, fitted, data.truth.as_ref())?.clone(),
        ),
        BetaSource::Constant(c) => {
            let raw = CoefficientVector::new(
                DVector::from_element(data.train.p(), *c),
                crate::regress::Method::Custom,
                crate::regress::Hyperparam::None,
                None,
            )?;
            (
                format!("constant({})", fmt_f64(*c)),
                raw.expressed_in(&data.state)?,
            )
        }
        BetaSource::File(path) => {
            let raw = CoefficientVector::new(
                read_beta_file(path, data.train.p())?,
                crate::regress::Method::Custom,
                crate::regress::Hyperparam::None,
                None,
            )?;
            (
                format!("file({})", path.display()),
                raw.expressed_in(&data.state)?,
            )
        }
    };
    let label = format!("{k}:{}-vs-{b_label}", spec.a);
    let cmp = match (spec.gamma, spec.c) {
        (Some(g), _) => compare_at_gamma_factored(&data.train, f, a, &b, Gamma::Finite(g))?,
        (None, Some(c)) => {
            let eval = match &spec.holdout {
                Some(name) => {
                    &data
                        .tests
                        .iter()
                        .find(|s| &s.name == name)
                        .ok_or_else(|| Error::Config(format!("unknown holdout split '{name}'")))?
                        .prepared
                }
                None => &data.train,
            };
            select_gamma_factored(&data.train, f, eval, a, &b, c, &spec.search)?
        }
        (None, None) => return Err(Error::Config(format!("nullspace[{k}]: set `gamma` or `c`"))),
    };
    Ok((label, cmp))
}

fn nullspace_rows(d: &Dataset, cmps: &[(String, NullspaceComparison)]) -> Vec<Vec<String>> {
    let lead = [
        "comparison",
        "series",
        "gamma",
        "nrmse_before",
        "nrmse_after",
        "nrmse_change",
        "c",
    ];
    let mut rows = column_header(&lead, d);
    for (label, c) in cmps {
        let series = [
            ("beta_a", c.beta_a.beta.clone()),
            ("beta_b", c.beta_b.beta.clone()),
            ("v", c.v.clone()),
            ("beta_a_plus_v", c.modified()),
        ];
        for (name, v) in series {
            let mut row = vec![
                label.clone(),
                name.to_string(),
                c.gamma.to_string(),
                fmt_f64(c.nrmse_before),
                fmt_f64(c.nrmse_after),
                fmt_f64(c.nrmse_change()),
                c.constraint_c.map_or_else(String::new, fmt_f64),
            ];
            row.extend(v.iter().map(|&x| fmt_f64(x)));
            rows.push(row);
        }
    }
    rows
}

fn nullspace_plot(d: &Dataset, label: &str, a: &str, b: &str, c: &NullspaceComparison) -> String {
    let (grid, x_label) = axis(d);
    let mut plot = LinePlot::new(
        format!("{label} (gamma = {})", c.gamma),
        x_label,
        "coefficient",
    );
    plot.push(Series::new(
        format!("A: {a}"),
        grid.clone(),
        vec_of(&c.beta_a.beta),
        PALETTE[0],
    ));
    plot.push(
        Series::new(
            format!("B: {b}"),
            grid.clone(),
            vec_of(&c.beta_b.beta),
            PALETTE[1],
        )
        .dashed(),
    );
    plot.push(Series::new(
        "A + v",
        grid,
        vec_of(&c.modified()),
        PALETTE[2],
    ));
    plot.render()
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Execute `verb` for `cfg`, writing artifacts under `out`.
pub fn run(cfg: &RunConfig, verb: Verb, out: &Path) -> Result<RunSummary> {
    cfg.validate(verb.fits() || verb == Verb::Cv)?;
    let data = load(cfg, verb != Verb::Snr && verb != Verb::Synth)?;
    let mut w = Writer {
        root: out.to_path_buf(),
        written: Vec::new(),
    };
    let mut models = Vec::new();

    if verb == Verb::Synth {
        w.dataset(&cfg.eval.train_name, &data.train_raw)?;
        for s in &data.tests {
            w.dataset(&s.name, &s.raw)?;
        }
        if let Some(t) = &data.truth {
            let (raw, _) = data.state.coefficients_to_original(&t.beta);
            let mut rows = vec![vec!["column".to_string(), "beta".to_string()]];
            rows.extend(
                raw.iter()
                    .enumerate()
                    .map(|(j, &v)| vec![j.to_string(), fmt_f64(v)]),
            );
            w.rows("data/truth.csv", &rows)?;
        }
    }

    let want_snr = verb == Verb::Snr || (verb == Verb::Report && cfg.snr.is_some());
    if want_snr {
        let s = cfg.snr.clone().unwrap_or_default();
        let profile = snr_profile(&data.train_raw, s.smooth_target, s.degree, s.offset)?;
        w.rows("snr.csv", &snr_rows(&data.train_raw, &profile))?;
        let (grid, x_label) = axis(&data.train_raw);
        let mut plot = LinePlot::new("per-column SNR", x_label, "SNR (dB)");
        plot.push(Series::new(
            "snr_db",
            grid,
            profile.snr_db.clone(),
            PALETTE[0],
        ));
        w.text("plots/snr.svg", &plot.render())?;
    }

    let mut cv_results = Vec::new();
    if verb == Verb::Cv || verb.fits() {
        for spec in &cfg.models {
            let tunable = spec.estimator != Estimator::MinNorm;
            if spec.needs_cv() || (verb == Verb::Cv && tunable) {
                cv_results.push((spec.id.clone(), run_cv(spec, cfg, &data.train_raw)?));
            }
        }
        if !cv_results.is_empty() {
            w.rows("cv.csv", &cv_rows(&cv_results))?;
            for (id, r) in &cv_results {
                w.text(&format!("plots/cv_{}.svg", slug(id)), &cv_plot(id, r))?;
            }
        }
    }

    let mut fitted = Vec::new();
    if verb.fits() {
        for spec in &cfg.models {
            let value = match fixed_value(spec) {
                Some(v) => v,
                None => cv_results
                    .iter()
                    .find(|(id, _)| id == &spec.id)
                    .map(|(_, r)| r.chosen())
                    .expect("cross-validated above"),
            };
            info!("fitting {} ({}) at {value}", spec.id, spec.estimator);
            let beta = fit_estimator(spec.estimator, value, &data.train, &cfg.solver)?;
            models.push((spec.id.clone(), beta.label()));
            fitted.push(Fitted {
                id: spec.id.clone(),
                beta,
            });
        }
    }

    let mut comparisons = Vec::new();
    if matches!(verb, Verb::Nullspace | Verb::Report) && !cfg.comparisons.is_empty() {
        let f = svd_factor(data.train.x(), None)?;
        for (k, spec) in cfg.comparisons.iter().enumerate() {
            comparisons.push((spec, compare(k, spec, &data, &f, &fitted)?));
        }
    }

    if verb.fits() {
        let mut named: Vec<(&str, &CoefficientVector)> =
            fitted.iter().map(|f| (f.id.as_str(), &f.beta)).collect();
        if let Some(t) = &data.truth {
            named.push((TRUTH_ID, t));
        }
        let mut rows = column_header(&["model", "method", "hyperparam", "scheme"], &data.train);
        for (id, b) in &named {
            let mut row = vec![
                id.to_string(),
                b.method.to_string(),
                b.hyperparam.to_string(),
                cfg.scheme.to_string(),
            ];
            row.extend(b.beta.iter().map(|&v| fmt_f64(v)));
            rows.push(row);
        }
        w.rows("coefficients.csv", &rows)?;

        let subsets = cfg
            .eval
            .threshold
            .map(SubsetSpec::low_high)
            .unwrap_or_default();
        let mut splits: Vec<(&str, &Dataset)> = vec![(cfg.eval.train_name.as_str(), &data.train)];
        splits.extend(data.tests.iter().map(|s| (s.name.as_str(), &s.prepared)));
        let mut reports = Vec::new();
        for (id, b) in &named {
            let mut r = evaluate(b, &splits, &subsets)?;
            r.model = id.to_string();
            reports.push(r);
        }
        for (_, (label, c)) in &comparisons {
            let modified = CoefficientVector {
                beta: c.modified(),
                ..c.beta_a.clone()
            };
            let mut r = evaluate(&modified, &splits, &subsets)?;
            r.model = format!("{label}:a+v");
            reports.push(r);
        }
        w.rows("eval.csv", &eval_rows(&reports))?;

        let (grid, x_label) = axis(&data.train);
        let mut plot = LinePlot::new(
            format!("coefficients ({} scheme)", cfg.scheme),
            x_label,
            "coefficient",
        );
        for (k, (id, b)) in named.iter().enumerate() {
            let mut s = Series::new(
                *id,
                grid.clone(),
                vec_of(&b.beta),
                PALETTE[k % PALETTE.len()],
            );
            if *id == TRUTH_ID {
                s = s.dashed();
            }
            plot.push(s);
        }
        w.text("plots/coefficients.svg", &plot.render())?;
    }

    if !comparisons.is_empty() {
        let cmps: Vec<(String, NullspaceComparison)> = comparisons
            .iter()
            .map(|(_, (l, c))| (l.clone(), c.clone()))
            .collect();
        w.rows("nullspace.csv", &nullspace_rows(&data.train, &cmps))?;
        for (k, (spec, (label, c))) in comparisons.iter().enumerate() {
            let b = match &spec.b {
                BetaSource::Model(id) => id.clone(),
                BetaSource::Constant(v) => format!("constant {}", fmt_f64(*v)),
                BetaSource::File(p) => p.display().to_string(),
            };
            w.text(
                &format!("plots/nullspace_{k}_{}.svg", slug(&spec.a)),
                &nullspace_plot(&data.train, label, &spec.a, &b, c),
            )?;
        }
    }

    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        artifacts: w.written,
        models,
    })
}

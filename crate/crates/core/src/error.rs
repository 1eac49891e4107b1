use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("column {column} is degenerate: std {std:e} <= floor {floor:e}")]
    DegenerateColumn { column: usize, std: f64, floor: f64 },

    #[error("PLS terminated early: {achieved} of {requested} components before the regression input vanished")]
    PlsEarlyTermination { achieved: usize, requested: usize },

    #[error(
        "generalized lasso did not converge in {iterations} iterations \
         (primal residual {primal:e}, dual residual {dual:e})"
    )]
    NotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
        /// Last beta iterate.
        best: Vec<f64>,
    },

    #[error("preprocessing provenance mismatch: coefficients fit under {coefficients}, data prepared under {data}")]
    Provenance { coefficients: String, data: String },

    #[error(
        "no feasible relaxation: even gamma = {gamma_max:e} changes the NRMSE by {delta:e} > c = {c:e}"
    )]
    NoFeasibleRelaxation { c: f64, gamma_max: f64, delta: f64 },

    #[error("{}:{row}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Dimension(_) => "dimension",
            Error::Numerical(_) => "numerical",
            Error::DegenerateColumn { .. } => "degenerate-column",
            Error::PlsEarlyTermination { .. } => "pls-early-termination",
            Error::NotConverged { .. } => "not-converged",
            Error::Provenance { .. } => "provenance",
            Error::NoFeasibleRelaxation { .. } => "no-feasible-relaxation",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

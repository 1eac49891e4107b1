//! File formats, run configuration, plots and the end-to-end run driver.

pub mod config;
pub mod plot;
pub mod run;
pub mod table;

pub use config::{BetaSource, ComparisonSpec, DataSource, ModelSpec, RunConfig};
pub use run::{run, RunSummary, Verb};
pub use table::{convert, load_csv, load_dataset, load_response, save_csv, save_response, Layout};

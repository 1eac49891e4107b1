use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsreg::io::{convert, run, Layout, RunConfig, Verb};
use nsreg::{Error, Scheme};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "nsreg",
    version,
    about = "Regression coefficients compared up to the nullspace of the data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every configured model; write coefficients, evaluation table and plots.
    Fit(RunArgs),
    /// Cross-validate every tunable model.
    Cv(RunArgs),
    /// Fit models and run the configured nullspace comparisons.
    Nullspace(RunArgs),
    /// Per-column SNR profile of the training predictors.
    Snr(RunArgs),
    /// Write the configured data (generated or loaded) as canonical CSV.
    Synth(RunArgs),
    /// Everything the configuration asks for.
    Report(RunArgs),
    /// Rewrite a predictor file into the canonical CSV layout.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, env = "NSREG_OUT_DIR")]
    out: Option<PathBuf>,
    /// Overrides the configured preprocessing scheme.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Center,
    Zscore,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    /// One sample per row.
    Rows,
    /// One sample per column, first column the grid.
    Columns,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "rows")]
    layout: LayoutArg,
    /// Parse the header of a row-layout file as the domain grid.
    #[arg(long)]
    header_is_domain: bool,
}

fn execute(verb: Verb, args: RunArgs) -> Result<serde_json::Value, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = match s {
            SchemeArg::Center => Scheme::Center,
            SchemeArg::Zscore => Scheme::Zscore,
        };
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run(&cfg, verb, &out)?;
    Ok(json!({
        "status": "ok",
        "out": summary.out_dir,
        "artifacts": summary.artifacts,
        "models": summary
            .models
            .iter()
            .map(|(id, label)| json!({ "id": id, "fit": label }))
            .collect::<Vec<_>>(),
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => execute(Verb::Fit, a),
        Command::Cv(a) => execute(Verb::Cv, a),
        Command::Nullspace(a) => execute(Verb::Nullspace, a),
        Command::Snr(a) => execute(Verb::Snr, a),
        Command::Synth(a) => execute(Verb::Synth, a),
        Command::Report(a) => execute(Verb::Report, a),
        Command::Convert(a) => {
            let layout = match a.layout {
                LayoutArg::Rows => Layout::Rows,
                LayoutArg::Columns => Layout::Columns,
            };
            convert(&a.input, &a.output, layout, a.header_is_domain)
                .map(|d| json!({ "status": "ok", "output": a.output, "n": d.n(), "p": d.p() }))
        }
    };
    match result {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!(
                "{}",
                json!({ "status": "error", "kind": e.kind(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}

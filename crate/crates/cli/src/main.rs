//! Command-line front end: `run` executes a configured workflow and
//! writes a versioned JSON summary plus plot-ready artifacts, `validate`
//! checks a configuration without computing, and `diagnose` scores
//! stored predictions against ground truth.
//!
//! Exit codes: 0 success, 2 configuration error, 3 model evaluation or
//! I/O failure, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use prouq::error::Error;

mod config;
mod output;
mod workflows;

#[derive(Parser)]
#[command(name = "prouq", version, about = "Probabilistic UQ workflows for expensive models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the workflow described by a configuration file.
    Run {
        config: PathBuf,
        /// Override a configuration key before validation, for example
        /// `--set seed=7` or `--set loop.batch_size=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory; defaults to the config's `output_dir`, then
        /// the PROUQ_OUT_DIR environment variable, then the working dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the configured evaluation concurrency.
        #[arg(long)]
        max_concurrency: Option<usize>,
    },
    /// Check a configuration and print the effective document, then OK.
    Validate { config: PathBuf },
    /// Score a predictions CSV (needs `mean` and `std` columns) against
    /// a truth CSV (first column) and print the metrics as JSON.
    Diagnose {
        predictions: PathBuf,
        truths: PathBuf,
        /// Also write metrics.json and calibration.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::DimensionMismatch(_)
        | Error::NonPositiveParameter(_)
        | Error::EmptyData(_)
        | Error::InsufficientChains { .. }
        | Error::InsufficientCandidates { .. }
        | Error::VersionMismatch { .. }
        | Error::CorruptFile(_)
        | Error::OutOfSupport(_)
        | Error::Json(_) => 2,
        Error::ModelEvaluation(_) | Error::Io(_) => 3,
        Error::NonSquare { .. }
        | Error::NonSymmetric { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::ConvergenceFailure(_)
        | Error::NonFiniteObjective { .. }
        | Error::NonFiniteTarget
        | Error::ZeroDensityAtSample { .. }
        | Error::NoFailureFound(_) => 4,
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, set, out, seed, max_concurrency } => {
            let mut cfg = config::load_config(&config, &set)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(conc) = max_concurrency {
                cfg.max_concurrency = conc;
            }
            cfg.validate()?;
            let out_dir = output::resolve_output_dir(out.as_deref(), &cfg);
            let outcome = workflows::execute(&cfg, &out_dir)?;
            let summary = json!({
                "schema_version": 1u32,
                "kind": "run_summary",
                "workflow": cfg.workflow.name(),
                "seed": cfg.seed,
                "max_concurrency": cfg.max_concurrency,
                "config": serde_json::to_value(&cfg)?,
                "results": outcome.results,
            });
            let summary_path = out_dir.join("summary.json");
            output::write_json(&summary_path, &summary)?;
            println!("{}", summary_path.display());
            match outcome.abort {
                Some(reason) => {
                    eprintln!("run stopped early: {reason}");
                    Ok(ExitCode::from(4))
                }
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Validate { config } => {
            let cfg = config::load_config(&config, &[])?;
            // Bridge through JSON so absent optional values (JSON null)
            // drop out instead of failing TOML serialization.
            let effective = json_to_toml(&serde_json::to_value(&cfg)?)
                .unwrap_or_else(|| toml::Value::Table(Default::default()));
            let doc = toml::to_string_pretty(&effective)
                .map_err(|e| Error::InvalidConfig(format!("effective config: {e}")))?;
            print!("{doc}");
            println!("OK");
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { predictions, truths, out } => {
            let report = workflows::diagnose(&predictions, &truths, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn json_to_toml(v: &serde_json::Value) -> Option<toml::Value> {
    match v {
        serde_json::Value::Null => None,
        serde_json::Value::Bool(b) => Some(toml::Value::Boolean(*b)),
        serde_json::Value::Number(n) => Some(match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(n.as_f64().expect("json number")),
        }),
        serde_json::Value::String(s) => Some(toml::Value::String(s.clone())),
        serde_json::Value::Array(items) => {
            Some(toml::Value::Array(items.iter().filter_map(json_to_toml).collect()))
        }
        serde_json::Value::Object(map) => {
            let mut table = toml::Table::new();
            for (key, value) in map {
                if let Some(converted) = json_to_toml(value) {
                    table.insert(key.clone(), converted);
                }
            }
            Some(toml::Value::Table(table))
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

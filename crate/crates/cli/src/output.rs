//! Artifact writing. Every file follows the partial-marker protocol: a
//! sidecar `.partial` marker is created first and removed once the write
//! completes, so readers can spot truncated artifacts after a crash.

use std::io::Write;
use std::path::{Path, PathBuf};

use prouq::error::Error;
use prouq::harness::partial_marker;

use crate::config::RunConfig;

/// Output directory precedence: `--out` flag, then the config's
/// `output_dir`, then the `PROUQ_OUT_DIR` environment variable, then the
/// working directory.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    if let Some(dir) = std::env::var_os("PROUQ_OUT_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(".")
}

fn with_marker(path: &Path, write: impl FnOnce() -> Result<(), Error>) -> Result<(), Error> {
    let marker = partial_marker(path);
    std::fs::write(&marker, b"write in progress\n")?;
    write()?;
    std::fs::remove_file(&marker)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    with_marker(path, || {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut file, value)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    })
}

/// CSV with one header row; floats are rendered with Rust's shortest
/// round-trip formatting, so identical numbers produce identical bytes.
pub fn write_csv(
    path: &Path,
    headers: &[String],
    rows: &[Vec<f64>],
) -> Result<(), Error> {
    with_marker(path, || {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::InvalidConfig(format!("creating {}: {e}", path.display())))?;
        let io_err = |e: csv::Error| Error::ModelEvaluation(format!("writing csv: {e}"));
        writer.write_record(headers).map_err(io_err)?;
        for row in rows {
            debug_assert_eq!(row.len(), headers.len());
            let rendered: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writer.write_record(&rendered).map_err(io_err)?;
        }
        writer.flush()?;
        Ok(())
    })
}

/// MCMC chains as JSON lines: a header object, then one line per kept
/// step per walker.
pub fn write_chains_jsonl(path: &Path, run: &prouq::learner::McmcRun) -> Result<(), Error> {
    with_marker(path, || {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let kept = run.chains.first().map_or(0, |c| c.nrows());
        let dim = run.chains.first().map_or(0, |c| c.ncols());
        let header = serde_json::json!({
            "schema_version": 1u32,
            "kind": "mcmc_chains",
            "walkers": run.chains.len(),
            "kept_steps": kept,
            "dim": dim,
        });
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        for (w, chain) in run.chains.iter().enumerate() {
            for s in 0..chain.nrows() {
                let position: Vec<f64> = chain.row(s).iter().copied().collect();
                let line = serde_json::json!({
                    "walker": w,
                    "step": s,
                    "position": position,
                });
                serde_json::to_writer(&mut file, &line)?;
                file.write_all(b"\n")?;
            }
        }
        file.flush()?;
        Ok(())
    })
}

/// Reads a CSV of finite reals with one header row.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), Error> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidConfig(format!("opening {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::InvalidConfig(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 2,
                record.len(),
                headers.len()
            )));
        }
        let row: Result<Vec<f64>, Error> = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "{}: row {} field '{}' is not a number",
                        path.display(),
                        i + 2,
                        field
                    ))
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(format!("{} has no data rows", path.display())));
    }
    Ok((headers, rows))
}

/// Splits a numeric table into (inputs, named column) by header name.
pub fn split_column(
    headers: &[String],
    rows: &[Vec<f64>],
    column: &str,
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<f64>), Error> {
    let idx = headers.iter().position(|h| h == column).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "column '{column}' not found; available: {}",
            headers.join(", ")
        ))
    })?;
    let kept_headers: Vec<String> =
        headers.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, h)| h.clone()).collect();
    if kept_headers.is_empty() {
        return Err(Error::InvalidConfig(
            "the table needs at least one column besides the extracted one".into(),
        ));
    }
    let mut inputs = Vec::with_capacity(rows.len());
    let mut extracted = Vec::with_capacity(rows.len());
    for row in rows {
        let mut kept = Vec::with_capacity(row.len() - 1);
        for (i, v) in row.iter().enumerate() {
            if i == idx {
                extracted.push(*v);
            } else {
                kept.push(*v);
            }
        }
        inputs.push(kept);
    }
    Ok((kept_headers, inputs, extracted))
}

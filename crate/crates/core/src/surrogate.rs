//! Common surrogate interface and the on-disk model format.
//!
//! Files are a 4-byte magic, a little-endian u32 format version, a
//! length-prefixed JSON header (model kind, metadata, array manifest), then
//! the declared arrays as little-endian f64 in row-major order. Loading
//! re-derives factorizations from the stored training data, so a round-trip
//! reproduces predictions bitwise.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::PosteriorPrediction;
use crate::error::Error;

/// A trained statistical emulator: Gaussian predictions at new inputs.
///
/// Implementations own their input/output transforms; `predict` takes and
/// returns original-unit quantities.
pub trait Surrogate {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Posterior mean/variance at the query rows. The full covariance is
    /// computed only when `full_covariance` is set.
    fn predict(
        &self,
        inputs: &DMatrix<f64>,
        full_covariance: bool,
    ) -> Result<PosteriorPrediction, Error>;

    /// Correlation length scales in original input units, one per input
    /// dimension. Used by batch-selection penalization.
    fn length_scales(&self) -> Vec<f64>;
}

const MAGIC: &[u8; 4] = b"PQSM";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Writes a model file. `meta` carries the serialized hyperparameters and
/// transforms; `arrays` the training data and any retained draws.
pub(crate) fn write_model(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    arrays: &[(&str, &DMatrix<f64>)],
) -> Result<(), Error> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        arrays: arrays
            .iter()
            .map(|(name, m)| ArrayEntry { name: name.to_string(), rows: m.nrows(), cols: m.ncols() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, m) in arrays {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) struct ModelFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: HashMap<String, DMatrix<f64>>,
}

/// Reads and validates a model file written by [`write_model`].
pub(crate) fn read_model(path: &Path) -> Result<ModelFile, Error> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::CorruptFile("missing magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::CorruptFile("bad magic bytes".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(|_| Error::CorruptFile("missing version".into()))?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::CorruptFile("missing header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::CorruptFile("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::CorruptFile(format!("unparseable header: {e}")))?;

    let mut arrays = HashMap::new();
    let mut buf = [0u8; 8];
    for entry in &header.arrays {
        let mut m = DMatrix::zeros(entry.rows, entry.cols);
        for i in 0..entry.rows {
            for j in 0..entry.cols {
                r.read_exact(&mut buf).map_err(|_| {
                    Error::CorruptFile(format!("truncated array '{}'", entry.name))
                })?;
                m[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        arrays.insert(entry.name.clone(), m);
    }
    Ok(ModelFile { kind: header.kind, meta: header.meta, arrays })
}

pub(crate) fn require_array(file: &ModelFile, name: &str) -> Result<DMatrix<f64>, Error> {
    file.arrays
        .get(name)
        .cloned()
        .ok_or_else(|| Error::CorruptFile(format!("missing array '{name}'")))
}

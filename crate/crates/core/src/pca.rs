//! Linear principal component analysis on snapshot matrices with
//! explained-variance truncation and latent-space mapping.
//!
//! Snapshots are columns. The retained rank is the smallest `r` whose
//! residual energy ratio `1 - sum_{i<=r} sigma_i^2 / sum_i sigma_i^2`
//! drops below the threshold `tau`; at `tau = 1` the criterion is met
//! at `r = 1` whenever the matrix has any energy at all.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::thin_svd;
use crate::surrogate::{read_model, require_array, write_model};

/// An orthonormal basis of the leading principal subspace, plus the full
/// singular spectrum it was truncated from.
#[derive(Clone, Debug)]
pub struct LatentSpace {
    basis: DMatrix<f64>,
    singular_values: DVector<f64>,
    r: usize,
    tau: f64,
    snapshot_mean: Option<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PcaMeta {
    r: usize,
    tau: f64,
    centered: bool,
}

/// Fits the latent space of `snapshots` (one snapshot per column).
///
/// Centering subtracts the column mean before the decomposition and adds
/// it back on reconstruction; with a single snapshot it removes all
/// energy, so fitting then fails.
pub fn fit_pca(snapshots: &DMatrix<f64>, tau: f64, centering: bool) -> Result<LatentSpace, Error> {
    if snapshots.nrows() == 0 || snapshots.ncols() == 0 {
        return Err(Error::EmptyData("snapshot matrix".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig("tau must lie in (0, 1]".into()));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("snapshot entries must be finite".into()));
    }
    let snapshot_mean = centering.then(|| {
        let mut mean = DVector::zeros(snapshots.nrows());
        for j in 0..snapshots.ncols() {
            mean += snapshots.column(j);
        }
        mean / snapshots.ncols() as f64
    });
    let centered = match &snapshot_mean {
        Some(mean) => {
            let mut m = snapshots.clone();
            for j in 0..m.ncols() {
                let mut col = m.column_mut(j);
                col -= mean;
            }
            m
        }
        None => snapshots.clone(),
    };
    let svd = thin_svd(&centered)?;
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig(
            "snapshots carry no energy (all zero, or centered with a single snapshot)".into(),
        ));
    }
    let k = svd.singular_values.len();
    let mut partial = 0.0;
    let mut r = k;
    for i in 0..k {
        partial += svd.singular_values[i] * svd.singular_values[i];
        if 1.0 - partial / total < tau {
            r = i + 1;
            break;
        }
    }
    Ok(LatentSpace {
        basis: svd.u.columns(0, r).into_owned(),
        singular_values: svd.singular_values,
        r,
        tau,
        snapshot_mean,
    })
}

impl LatentSpace {
    /// Orthonormal basis, one principal component per column (N x r).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Full descending singular spectrum of the fitted snapshot matrix.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn snapshot_mean(&self) -> Option<&DVector<f64>> {
        self.snapshot_mean.as_ref()
    }

    /// Ambient (snapshot) dimension N.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Residual energy ratio left outside the leading `r` components.
    pub fn residual_energy_ratio(&self, r: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let kept: f64 = self.singular_values.iter().take(r).map(|s| s * s).sum();
        1.0 - kept / total
    }

    /// The same space truncated to a caller-chosen rank.
    pub fn with_rank(&self, r: usize) -> Result<Self, Error> {
        if r == 0 || r > self.basis.ncols() {
            return Err(Error::InvalidConfig(format!(
                "rank {r} outside 1..={}",
                self.basis.ncols()
            )));
        }
        Ok(Self {
            basis: self.basis.columns(0, r).into_owned(),
            singular_values: self.singular_values.clone(),
            r,
            tau: self.tau,
            snapshot_mean: self.snapshot_mean.clone(),
        })
    }

    /// Latent coordinates c = U_r^T (s - mean).
    pub fn to_latent(&self, s: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if s.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot has {} entries, space expects {}",
                s.len(),
                self.ambient_dim()
            )));
        }
        Ok(match &self.snapshot_mean {
            Some(mean) => self.basis.transpose() * (s - mean),
            None => self.basis.transpose() * s,
        })
    }

    /// Reconstruction s = U_r c + mean.
    pub fn from_latent(&self, c: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if c.len() != self.r {
            return Err(Error::DimensionMismatch(format!(
                "latent vector has {} entries, space has rank {}",
                c.len(),
                self.r
            )));
        }
        let mut s = &self.basis * c;
        if let Some(mean) = &self.snapshot_mean {
            s += mean;
        }
        Ok(s)
    }

    /// Maps each column of `snapshots` to latent coordinates (r x N_s).
    pub fn to_latent_batch(&self, snapshots: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
        let mut out = DMatrix::zeros(self.r, snapshots.ncols());
        for j in 0..snapshots.ncols() {
            let c = self.to_latent(&snapshots.column(j).into_owned())?;
            out.set_column(j, &c);
        }
        Ok(out)
    }

    /// Reconstructs each column of `coords` (N x N_s).
    pub fn from_latent_batch(&self, coords: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
        let mut out = DMatrix::zeros(self.ambient_dim(), coords.ncols());
        for j in 0..coords.ncols() {
            let s = self.from_latent(&coords.column(j).into_owned())?;
            out.set_column(j, &s);
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let meta = PcaMeta { r: self.r, tau: self.tau, centered: self.snapshot_mean.is_some() };
        let sv = DMatrix::from_column_slice(self.singular_values.len(), 1,
            self.singular_values.as_slice());
        let mut arrays: Vec<(&str, &DMatrix<f64>)> =
            vec![("basis", &self.basis), ("singular_values", &sv)];
        let mean_m = self
            .snapshot_mean
            .as_ref()
            .map(|m| DMatrix::from_column_slice(m.len(), 1, m.as_slice()));
        if let Some(m) = &mean_m {
            arrays.push(("snapshot_mean", m));
        }
        write_model(path, "pca", serde_json::to_value(&meta)?, &arrays)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = read_model(path)?;
        if file.kind != "pca" {
            return Err(Error::CorruptFile(format!(
                "expected a pca space, found '{}'",
                file.kind
            )));
        }
        let meta: PcaMeta = serde_json::from_value(file.meta.clone())?;
        let basis = require_array(&file, "basis")?;
        let sv = require_array(&file, "singular_values")?;
        if basis.ncols() != meta.r {
            return Err(Error::CorruptFile("basis width disagrees with rank".into()));
        }
        let snapshot_mean = if meta.centered {
            let m = require_array(&file, "snapshot_mean")?;
            if m.nrows() != basis.nrows() || m.ncols() != 1 {
                return Err(Error::CorruptFile("snapshot mean shape".into()));
            }
            Some(m.column(0).into_owned())
        } else {
            None
        };
        Ok(Self {
            basis,
            singular_values: sv.column(0).into_owned(),
            r: meta.r,
            tau: meta.tau,
            snapshot_mean,
        })
    }
}

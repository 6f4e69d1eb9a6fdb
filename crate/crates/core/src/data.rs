use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Paired training inputs (N x D) and outputs (N x M), M >= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self, Error> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyData("dataset needs at least one row".into()));
        }
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows vs {} output rows",
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        if inputs.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::EmptyData("dataset needs at least one column".into()));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("dataset entries must be finite".into()));
        }
        Ok(Self { inputs, outputs })
    }

    /// Single-output convenience constructor.
    pub fn univariate(inputs: DMatrix<f64>, outputs: DVector<f64>) -> Result<Self, Error> {
        let n = outputs.len();
        Self::new(inputs, DMatrix::from_column_slice(n, 1, outputs.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// The only output column; errors unless M = 1.
    pub fn single_output(&self) -> Result<DVector<f64>, Error> {
        if self.outputs.ncols() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected one output column, got {}",
                self.outputs.ncols()
            )));
        }
        Ok(self.outputs.column(0).into_owned())
    }

    /// Appends new rows; shapes must match the existing columns.
    pub fn append(&mut self, inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<(), Error> {
        if inputs.ncols() != self.inputs.ncols() || outputs.ncols() != self.outputs.ncols() {
            return Err(Error::DimensionMismatch("appended columns differ from dataset".into()));
        }
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::DimensionMismatch("appended input/output row counts differ".into()));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("appended entries must be finite".into()));
        }
        let mut new_inputs = DMatrix::zeros(self.inputs.nrows() + inputs.nrows(), self.inputs.ncols());
        new_inputs.rows_mut(0, self.inputs.nrows()).copy_from(&self.inputs);
        new_inputs.rows_mut(self.inputs.nrows(), inputs.nrows()).copy_from(inputs);
        let mut new_outputs =
            DMatrix::zeros(self.outputs.nrows() + outputs.nrows(), self.outputs.ncols());
        new_outputs.rows_mut(0, self.outputs.nrows()).copy_from(&self.outputs);
        new_outputs.rows_mut(self.outputs.nrows(), outputs.nrows()).copy_from(outputs);
        self.inputs = new_inputs;
        self.outputs = new_outputs;
        Ok(())
    }
}

/// Per-column affine map x -> (x - shift) / scale with strictly positive scales.
///
/// Stored alongside every surrogate so that training-space hyperparameters can
/// be related back to the original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl ColumnTransform {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self, Error> {
        if shift.len() != scale.len() {
            return Err(Error::DimensionMismatch("shift/scale lengths differ".into()));
        }
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::NonPositiveParameter("transform scale".into()));
        }
        Ok(Self { shift, scale })
    }

    pub fn identity(cols: usize) -> Self {
        Self { shift: vec![0.0; cols], scale: vec![1.0; cols] }
    }

    /// Mean-0 / std-1 standardization fitted to the columns of `m`.
    /// Degenerate (constant) columns keep scale 1 so the map stays invertible.
    pub fn standardizing(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut shift = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            shift.push(mean);
            scale.push(if std > 0.0 { std } else { 1.0 });
        }
        Self { shift, scale }
    }

    /// Mean-centering only (scale 1).
    pub fn centering(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let shift = (0..m.ncols()).map(|j| m.column(j).sum() / n).collect();
        Self { shift, scale: vec![1.0; m.ncols()] }
    }

    pub fn cols(&self) -> usize {
        self.shift.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shift
    }

    /// Maps rows of `m` into transformed space.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for j in 0..m.ncols() {
            let (shift, scale) = (self.shift[j], self.scale[j]);
            for i in 0..m.nrows() {
                out[(i, j)] = (out[(i, j)] - shift) / scale;
            }
        }
        out
    }

    /// Maps a transformed value in column `col` back to original units.
    pub fn invert_value(&self, col: usize, v: f64) -> f64 {
        v * self.scale[col] + self.shift[col]
    }

    /// Maps a transformed variance in column `col` back to original units.
    pub fn invert_variance(&self, col: usize, var: f64) -> f64 {
        var * self.scale[col] * self.scale[col]
    }
}

/// Gaussian posterior over outputs at a batch of query points.
///
/// For multi-output models the mean and variance are vectorized output-major:
/// all query points for output 0, then all for output 1, and so on. The full
/// covariance is populated only when requested; `clamped_negative_variances`
/// counts marginal variances that were truncated at zero (tiny negative values
/// arise from finite-precision Schur complements).
#[derive(Clone, Debug)]
pub struct PosteriorPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
    pub clamped_negative_variances: usize,
}

impl PosteriorPrediction {
    pub fn std(&self) -> DVector<f64> {
        self.variance.map(|v| v.sqrt())
    }

    /// Reshapes the output-major mean into an N x M matrix (rows = query
    /// points, columns = outputs).
    pub fn mean_matrix(&self, outputs: usize) -> DMatrix<f64> {
        let n = self.mean.len() / outputs;
        DMatrix::from_column_slice(n, outputs, self.mean.as_slice())
    }

    /// Reshapes the output-major variances into an N x M matrix.
    pub fn variance_matrix(&self, outputs: usize) -> DMatrix<f64> {
        let n = self.variance.len() / outputs;
        DMatrix::from_column_slice(n, outputs, self.variance.as_slice())
    }
}

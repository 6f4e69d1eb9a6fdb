use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// Thin singular value decomposition M = U diag(s) V^T with k = min(rows, cols)
/// retained columns and singular values sorted in descending order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// Computes the thin SVD. Fails with [`Error::ConvergenceFailure`] if the
/// iteration does not terminate; [`Error::EmptyData`] on an empty matrix.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd, Error> {
    if m.is_empty() {
        return Err(Error::EmptyData("cannot decompose an empty matrix".into()));
    }
    let mut svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::ConvergenceFailure("singular value decomposition".into()))?;
    svd.sort_by_singular_values();
    Ok(ThinSvd {
        u: svd.u.expect("u requested"),
        singular_values: svd.singular_values,
        v_t: svd.v_t.expect("v_t requested"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
        let gram = m.transpose() * m;
        let eye = DMatrix::identity(gram.nrows(), gram.ncols());
        (gram - eye).amax()
    }

    #[test]
    fn recovers_constructed_spectrum() {
        // Build M = U diag(5,2,0.1) V^T from householder-orthonormal factors.
        let a = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j + 1) as f64).sin());
        let qr = a.qr();
        let u0 = qr.q();
        let b = DMatrix::from_fn(4, 3, |i, j| ((i * 7 + 2 * j + 1) as f64).cos());
        let v0 = b.qr().q();
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 2.0, 0.1]));
        let m = &u0 * s * v0.transpose();

        let svd = thin_svd(&m).unwrap();
        // m is 6x4 with rank 3: four retained singular values, last ~ 0.
        assert_eq!(svd.u.shape(), (6, 4));
        assert_eq!(svd.v_t.shape(), (4, 4));
        assert_relative_eq!(svd.singular_values[0], 5.0, max_relative = 1e-10);
        assert_relative_eq!(svd.singular_values[1], 2.0, max_relative = 1e-10);
        assert_relative_eq!(svd.singular_values[2], 0.1, max_relative = 1e-8);
        assert!(svd.singular_values[3].abs() < 1e-12);
    }

    #[test]
    fn factors_are_orthonormal_and_reconstruct() {
        let m = DMatrix::from_fn(8, 5, |i, j| ((i as f64) * 0.7 - (j as f64) * 1.3).tanh());
        let svd = thin_svd(&m).unwrap();
        assert!(orthonormality_defect(&svd.u) < 1e-8);
        assert!(orthonormality_defect(&svd.v_t.transpose()) < 1e-8);
        for i in 0..4 {
            assert!(svd.singular_values[i] >= svd.singular_values[i + 1]);
            assert!(svd.singular_values[i + 1] >= 0.0);
        }
        let recon = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * &svd.v_t;
        let rel = (&recon - &m).norm() / m.norm();
        assert!(rel < 1e-8, "relative reconstruction error {rel}");
    }

    #[test]
    fn wide_matrix_thin_shapes() {
        let m = DMatrix::from_fn(3, 7, |i, j| (i + 2 * j) as f64 + 0.5);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.singular_values.len(), 3);
        assert_eq!(svd.v_t.shape(), (3, 7));
    }
}

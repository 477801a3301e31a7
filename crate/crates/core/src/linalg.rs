//! Dense kernels: truncated symmetric least squares and thin QR.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub effective_rank: usize,
    /// `sigma_max / sigma_min` over the kept singular values.
    pub cond_estimate: f64,
    pub truncated: usize,
    pub sigma_max: f64,
}

/// Minimum-norm solution of the symmetric system `m x = b`, discarding singular
/// values below `rcond * sigma_max`.
///
/// For a symmetric matrix the singular values are the absolute eigenvalues, so the
/// truncated pseudo-inverse is applied through a symmetric eigendecomposition.
pub fn solve_lstsq(
    m: &DMatrix<f64>,
    b: &[f64],
    rcond: f64,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let n = m.nrows();
    if m.ncols() != n || b.len() != n {
        return invalid("solve_lstsq needs a square matrix and matching right-hand side");
    }
    if !(rcond > 0.0 && rcond < 1.0) {
        return invalid("rcond must lie in (0, 1)");
    }
    if m.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite entry in least-squares system".into(),
        ));
    }
    if n == 0 {
        return Ok((Vec::new(), SolveDiagnostics::default()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or_else(|| {
        Error::NumericalFailure("symmetric eigendecomposition did not converge".into())
    })?;
    let sigma_max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let mut diag = SolveDiagnostics {
        sigma_max,
        ..Default::default()
    };
    let mut x = DVector::<f64>::zeros(n);
    if sigma_max == 0.0 {
        diag.truncated = n;
        return Ok((x.as_slice().to_vec(), diag));
    }
    let cutoff = rcond * sigma_max;
    let rhs = DVector::from_column_slice(b);
    let mut sigma_min = sigma_max;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() < cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let coef = v.dot(&rhs) / lambda;
        x.axpy(coef, &v, 1.0);
        diag.effective_rank += 1;
        sigma_min = sigma_min.min(lambda.abs());
    }
    diag.truncated = n - diag.effective_rank;
    diag.cond_estimate = sigma_max / sigma_min;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite least-squares solution (sigma_max = {sigma_max:e})"
        )));
    }
    Ok((x.as_slice().to_vec(), diag))
}

/// Thin QR of a tall `rows x cols` matrix: `a = q r` with `q` having orthonormal
/// columns (`rows x cols`) and `r` square.
pub fn thin_qr(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    debug_assert!(a.nrows() >= a.ncols());
    let qr = a.qr();
    (qr.q(), qr.r())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let m = DMatrix::<f64>::identity(4, 4);
        let (x, d) = solve_lstsq(&m, &[1.0, -2.0, 3.0, 0.5], 1e-10).unwrap();
        assert_eq!(d.effective_rank, 4);
        for (a, b) in x.iter().zip([1.0, -2.0, 3.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_singular_value_is_dropped() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-20]);
        let (x, d) = solve_lstsq(&m, &[1.0, 1.0], 1e-12).unwrap();
        assert_eq!(d.effective_rank, 1);
        assert_eq!(d.truncated, 1);
        assert!((x[0] - 1.0).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn singular_consistent_system_min_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (x, d) = solve_lstsq(&m, &[2.0, 2.0], 1e-10).unwrap();
        assert_eq!(d.effective_rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite_and_bad_rcond() {
        let mut m = DMatrix::<f64>::identity(2, 2);
        assert!(solve_lstsq(&m, &[1.0, 1.0], 0.0).is_err());
        assert!(solve_lstsq(&m, &[1.0, 1.0], 1.0).is_err());
        m[(0, 1)] = f64::NAN;
        assert!(matches!(
            solve_lstsq(&m, &[1.0, 1.0], 1e-10),
            Err(Error::NumericalFailure(_))
        ));
        let m = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            solve_lstsq(&m, &[f64::INFINITY, 1.0], 1e-10),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn thin_qr_reconstructs() {
        let a = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let (q, r) = thin_qr(a.clone());
        assert_eq!(q.shape(), (7, 3));
        let qtq = q.transpose() * &q;
        assert!((qtq - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
        assert!((q * r - a).norm() < 1e-14);
    }
}

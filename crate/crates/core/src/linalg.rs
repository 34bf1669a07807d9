//! Small dense symmetric-matrix helpers.
//!
//! Dimensions here are tiny (the feature dimension, rarely above 25), but
//! the largest-eigenvalue routine sits inside the solvers' innermost loop,
//! so it avoids a full eigendecomposition: closed forms for d <= 2 and a
//! warm-started power iteration above that, falling back to nalgebra's
//! symmetric QR only when the iteration stalls.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 512;

/// Largest eigenvalue of a symmetric positive-semidefinite matrix, clamped
/// at zero. Carries the leading eigenvector between calls so that repeated
/// queries on nearby matrices converge in a handful of iterations.
#[derive(Debug, Clone, Default)]
pub struct LambdaMax {
    warm: Option<DVector<f64>>,
}

impl LambdaMax {
    pub fn new() -> Self {
        Self::default()
    }

    /// Direction left behind by the last query: the leading eigenvector of
    /// the most recent matrix, up to iteration tolerance. `None` until a
    /// matrix of dimension 3 or more has been examined.
    pub fn warm_direction(&self) -> Option<&DVector<f64>> {
        self.warm.as_ref()
    }

    pub fn lambda_max(&mut self, m: &DMatrix<f64>) -> f64 {
        let d = m.nrows();
        debug_assert_eq!(d, m.ncols());
        match d {
            0 => 0.0,
            1 => m[(0, 0)].max(0.0),
            2 => lambda_max_2x2(m),
            _ => self.power_iterate(m),
        }
    }

    fn power_iterate(&mut self, m: &DMatrix<f64>) -> f64 {
        let d = m.nrows();
        let scale = m.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut v = match self.warm.take() {
            Some(v) if v.len() == d && v.iter().all(|x| x.is_finite()) => v,
            _ => start_vector(m),
        };
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            v = DVector::from_element(d, (d as f64).sqrt().recip());
        } else {
            v /= norm;
        }
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..POWER_MAX_ITERS {
            let w = m * &v;
            lambda = v.dot(&w);
            let residual = (&w - &v * lambda).norm();
            let wn = w.norm();
            if wn == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = w / wn;
            if residual <= POWER_TOL * scale.max(lambda.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            lambda = sym_eigenvalues(m).max();
        }
        self.warm = Some(v);
        lambda.max(0.0)
    }
}

fn start_vector(m: &DMatrix<f64>) -> DVector<f64> {
    // Row sums plus a diagonal tilt; never orthogonal to the leading
    // eigenvector for the covariance-shaped matrices seen here, and cheap.
    let d = m.nrows();
    let mut v = m * DVector::from_element(d, 1.0);
    let mut best = 0usize;
    for i in 1..d {
        if m[(i, i)] > m[(best, best)] {
            best = i;
        }
    }
    v[best] += m[(best, best)].abs() + 1.0;
    v
}

fn lambda_max_2x2(m: &DMatrix<f64>) -> f64 {
    let (a, b, c) = (m[(0, 0)], m[(1, 1)], m[(0, 1)]);
    let half_gap = 0.5 * (a - b);
    let root = (half_gap * half_gap + c * c).sqrt();
    (0.5 * (a + b) + root).max(0.0)
}

/// All eigenvalues of a symmetric matrix via nalgebra's symmetric QR.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

/// Inverse square root of a symmetric positive-definite matrix.
///
/// Eigenvalues are floored at `floor` before inversion when `floor > 0`;
/// with `floor == 0` any non-positive eigenvalue is an error.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let d = m.nrows();
    let mut inv_roots = DVector::zeros(d);
    for i in 0..d {
        let lam = if floor > 0.0 {
            eig.eigenvalues[i].max(floor)
        } else {
            let lam = eig.eigenvalues[i];
            if lam <= 0.0 {
                return Err(Error::SingularFisher);
            }
            lam
        };
        inv_roots[i] = lam.sqrt().recip();
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for i in 0..d {
        scaled.column_mut(i).scale_mut(inv_roots[i]);
    }
    Ok(&scaled * q.transpose())
}

/// Log-determinant of a symmetric positive-definite matrix; error if any
/// eigenvalue is non-positive.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let evs = sym_eigenvalues(m);
    let mut acc = 0.0;
    for &lam in evs.iter() {
        if lam <= 0.0 {
            return Err(Error::SingularFisher);
        }
        acc += lam.ln();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(entries: &[&[f64]]) -> DMatrix<f64> {
        let d = entries.len();
        DMatrix::from_fn(d, d, |i, j| entries[i][j])
    }

    #[test]
    fn lambda_max_matches_eigen_small() {
        let m = sym(&[&[2.0, 0.5, 0.1], &[0.5, 1.0, -0.2], &[0.1, -0.2, 0.7]]);
        let direct = sym_eigenvalues(&m).max();
        let mut pw = LambdaMax::new();
        assert_abs_diff_eq!(pw.lambda_max(&m), direct, epsilon = 1e-10);
        // warm restart on a perturbed matrix
        let m2 = &m * 1.001;
        let direct2 = sym_eigenvalues(&m2).max();
        assert_abs_diff_eq!(pw.lambda_max(&m2), direct2, epsilon = 1e-10);
    }

    #[test]
    fn lambda_max_zero_matrix() {
        let m = DMatrix::zeros(4, 4);
        assert_eq!(LambdaMax::new().lambda_max(&m), 0.0);
    }

    #[test]
    fn lambda_max_2x2_closed_form() {
        let m = sym(&[&[3.0, 1.0], &[1.0, 2.0]]);
        let direct = sym_eigenvalues(&m).max();
        assert_abs_diff_eq!(LambdaMax::new().lambda_max(&m), direct, epsilon = 1e-12);
    }

    #[test]
    fn inv_sqrt_roundtrip() {
        let m = sym(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let b = inv_sqrt_spd(&m, 0.0).unwrap();
        let ident = &b * &m * &b;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ident[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn inv_sqrt_rejects_singular_without_floor() {
        let m = sym(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(inv_sqrt_spd(&m, 0.0).is_err());
        assert!(inv_sqrt_spd(&m, 1e-6).is_ok());
    }

    #[test]
    fn log_det_matches_direct() {
        let m = sym(&[&[4.0, 1.0], &[1.0, 3.0]]);
        assert_abs_diff_eq!(log_det_spd(&m).unwrap(), (11.0f64).ln(), epsilon = 1e-12);
    }
}

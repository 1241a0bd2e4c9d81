//! Symmetric positive definite factorization with a relative pivot check.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BolmError, Result};

/// Pivots of the unit-diagonal scaled matrix below this value are treated
/// as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor of `S A S`, where `S = diag(A)^-1/2`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        let n = a.nrows();
        let singular = |dir: Vec<f64>| BolmError::SingularMatrix { context, direction: dir };
        if let Some(j) = (0..n).find(|&j| !(a[(j, j)] > 0.0) || !a[(j, j)].is_finite()) {
            let mut dir = vec![0.0; n];
            dir[j] = 1.0;
            return Err(singular(dir));
        }
        let scale = DVector::from_fn(n, |j, _| 1.0 / a[(j, j)].sqrt());
        let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
        let scaled = (&scaled + scaled.transpose()) * 0.5;
        let chol = Cholesky::new(scaled.clone()).filter(|c| {
            let l = c.l_dirty();
            (0..n).all(|j| l[(j, j)] * l[(j, j)] > PIVOT_TOL)
        });
        match chol {
            Some(chol) => Ok(Self { chol, scale }),
            None => Err(singular(null_direction(&scaled, &scale))),
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let sb = b.component_mul(&self.scale);
        self.chol.solve(&sb).component_mul(&self.scale)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut sb = b.clone();
        for (i, mut row) in sb.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        let mut x = self.chol.solve(&sb);
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.scale.len();
        self.solve_matrix(&DMatrix::identity(n, n))
    }
}

/// Unit eigenvector of the smallest eigenvalue, mapped back to the
/// unscaled coordinates.
fn null_direction(scaled: &DMatrix<f64>, scale: &DVector<f64>) -> Vec<f64> {
    let eig = scaled.clone().symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k).component_mul(scale);
    let v = v.normalize();
    // sign convention: largest component positive
    let s = if v[v.iamax()] < 0.0 { -1.0 } else { 1.0 };
    v.iter().map(|x| x * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_badly_scaled_systems() {
        let a = DMatrix::from_row_slice(2, 2, &[1e12, 1.0, 1.0, 2.0]);
        let f = SpdFactor::new(&a, "test").unwrap();
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let x = f.solve(&b);
        assert!((&a * &x - &b).amax() < 1e-9);
        let inv = f.inverse();
        assert!((&a * inv - DMatrix::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn reports_null_direction() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 4.0]);
        match SpdFactor::new(&a, "test") {
            Err(BolmError::SingularMatrix { direction, .. }) => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                assert!((direction[0] - h).abs() < 1e-8 && (direction[1] + h).abs() < 1e-8);
                assert!(direction[2].abs() < 1e-8);
            }
            other => panic!("expected singular, got {other:?}"),
        }
    }
}

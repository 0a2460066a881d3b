//! Least squares via Householder QR of the column-scaled design, with an SVD
//! of the triangular factor for a minimum-norm solution when the design is
//! rank deficient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below `RCOND * sigma_max` (of the scaled design) are
/// treated as zero.
pub const RCOND: f64 = 1e-10;

/// A factorised design, reusable for any number of target vectors.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    n_rows: usize,
    n_cols: usize,
    /// Columns are multiplied by `scale` before factorising.
    scale: Vec<f64>,
    /// Thin Q, row-major `n_rows x q_cols`.
    q_rows: Vec<f64>,
    q_cols: usize,
    /// `V Sigma^+ U'` for `R = U Sigma V'`.
    solve_map: DMatrix<f64>,
    rank: usize,
}

impl LeastSquares {
    pub fn new(mut design: DMatrix<f64>) -> Result<Self> {
        let (n_rows, n_cols) = design.shape();
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Regression("empty design".into()));
        }
        if design.iter().any(|x| !x.is_finite()) {
            return Err(Error::Regression("non-finite design entry".into()));
        }
        let scale: Vec<f64> = design
            .column_iter()
            .map(|col| {
                let norm = col.norm();
                if norm > 0.0 {
                    1.0 / norm
                } else {
                    0.0
                }
            })
            .collect();
        if scale.iter().all(|&s| s == 0.0) {
            return Err(Error::Regression("all-zero design".into()));
        }
        for (mut col, &s) in design.column_iter_mut().zip(&scale) {
            col *= s;
        }

        let qr = design.qr();
        let q = qr.q();
        let r = qr.r();
        let q_cols = q.ncols();
        let mut q_rows = vec![0.0; n_rows * q_cols];
        for (i, row) in q_rows.chunks_exact_mut(q_cols).enumerate() {
            for (k, x) in row.iter_mut().enumerate() {
                *x = q[(i, k)];
            }
        }

        let svd = r.svd(true, true);
        let sigma_max = svd.singular_values.max();
        if !(sigma_max > 0.0) {
            return Err(Error::Regression("all-zero design".into()));
        }
        let eps = RCOND * sigma_max;
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        let solve_map = svd
            .pseudo_inverse(eps)
            .map_err(|e| Error::Regression(e.to_string()))?;

        Ok(LeastSquares {
            n_rows,
            n_cols,
            scale,
            q_rows,
            q_cols,
            solve_map,
            rank,
        })
    }

    /// Builds the design from explicit rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != n_cols) {
            return Err(Error::Regression("ragged design rows".into()));
        }
        let design = DMatrix::from_row_iterator(
            rows.len(),
            n_cols,
            rows.iter().flat_map(|r| r.as_ref().iter().copied()),
        );
        Self::new(design)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Width of `Q' y`.
    pub fn projection_len(&self) -> usize {
        self.q_cols
    }

    #[inline]
    pub fn q_row(&self, i: usize) -> &[f64] {
        &self.q_rows[i * self.q_cols..(i + 1) * self.q_cols]
    }

    /// Coefficients (in the unscaled basis) from `Q' y`.
    pub fn coefficients_from_projection(&self, qty: &[f64]) -> Vec<f64> {
        debug_assert_eq!(qty.len(), self.q_cols);
        (0..self.n_cols)
            .map(|i| {
                let row = self.solve_map.row(i);
                self.scale[i] * row.iter().zip(qty).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn solve(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != self.n_rows {
            return Err(Error::Regression(format!(
                "{} targets for {} design rows",
                targets.len(),
                self.n_rows
            )));
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::Regression("non-finite target".into()));
        }
        let mut qty = vec![0.0; self.q_cols];
        for (i, &y) in targets.iter().enumerate() {
            for (acc, q) in qty.iter_mut().zip(self.q_row(i)) {
                *acc += q * y;
            }
        }
        Ok(self.coefficients_from_projection(&qty))
    }
}

/// Minimum-norm least-squares coefficients for `rows * beta ~ targets`.
pub fn regress<R: AsRef<[f64]>>(rows: &[R], targets: &[f64]) -> Result<Vec<f64>> {
    LeastSquares::from_rows(rows)?.solve(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsmc::basis::basis_vector;
    use crate::params::Model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pi = rng.random_range(-0.5..2.5);
                let c = rng.random_range(0.5..3.0);
                let nu = rng.random_range(0.0..0.08);
                basis_vector(pi, c, nu, Model::Svm)
            })
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn noiseless_recovery() {
        let rows = random_design(3000, 1);
        let beta0 = [0.3, -1.2, 0.7, 2.0, -0.4, 5.0, -30.0, 0.9, -8.0, 1.5];
        let y: Vec<f64> = rows.iter().map(|r| dot(r, &beta0)).collect();
        let beta = regress(&rows, &y).unwrap();
        for (b, b0) in beta.iter().zip(beta0) {
            assert!(((b - b0) / b0).abs() < 1e-8, "{b} vs {b0}");
        }
    }

    #[test]
    fn constant_targets_fit_intercept() {
        let rows = random_design(500, 2);
        let beta = regress(&rows, &vec![-0.37; 500]).unwrap();
        assert!((beta[0] + 0.37).abs() < 1e-8 * 0.37);
        for b in &beta[1..] {
            assert!(b.abs() < 1e-8);
        }
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let rows = random_design(2000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[1] * 0.5 - r[2] * 0.2 + rng.random_range(-1.0..1.0))
            .collect();
        let beta = regress(&rows, &y).unwrap();
        let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, yi)| yi - dot(r, &beta)).collect();
        let rnorm = resid.iter().map(|e| e * e).sum::<f64>().sqrt();
        for col in 0..10 {
            let column: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            let cnorm = column.iter().map(|e| e * e).sum::<f64>().sqrt();
            let cos = dot(&column, &resid).abs() / (cnorm * rnorm);
            assert!(cos < 1e-6, "column {col}: {cos}");
        }
    }

    #[test]
    fn collinear_columns_get_min_norm_solution() {
        // c constant: 1, c and c^2 columns are parallel
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| basis_vector(-0.5 + 0.06 * i as f64, 2.0, 0.0, Model::Cvm))
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + 3.0 * r[1] - r[2]).collect();
        let ls = LeastSquares::from_rows(&rows).unwrap();
        assert!(ls.rank() < 6);
        let beta = ls.solve(&y).unwrap();
        for (r, yi) in rows.iter().zip(&y) {
            assert!((dot(r, &beta) - yi).abs() < 1e-9);
        }
        // minimum norm is taken in the unit-column basis, so the intercept is
        // split over 1, c, c^2 in proportion to 1 : 1/c : 1/c^2
        assert!((beta[3] - beta[0] / 2.0).abs() < 1e-8);
        assert!((beta[4] - beta[0] / 4.0).abs() < 1e-8);
    }

    #[test]
    fn all_zero_design_fails() {
        let rows = vec![vec![0.0; 4]; 10];
        assert!(matches!(regress(&rows, &[1.0; 10]), Err(Error::Regression(_))));
    }
}

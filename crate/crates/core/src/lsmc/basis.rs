//! Regression basis and the closed-form maximiser of the fitted surface.
//!
//! Heston basis: `[1, pi, pi^2, c, c^2, nu, nu^2, pi c, pi nu, c nu]`.
//! Constant-volatility basis drops every variance term:
//! `[1, pi, pi^2, c, c^2, pi c]`.

use crate::params::Model;

pub fn basis_len(model: Model) -> usize {
    match model {
        Model::Svm => 10,
        Model::Cvm => 6,
    }
}

pub fn basis_vector(pi: f64, c: f64, nu: f64, model: Model) -> Vec<f64> {
    let mut out = vec![0.0; basis_len(model)];
    basis_from_powers([1.0, pi, pi * pi], c, nu, model, &mut out);
    out
}

/// Evaluates the basis with `(1, pi, pi^2)` replaced by `q`. The basis is
/// linear in those three powers, so this maps an orthogonal combination of
/// allocation rows to the matching combination of basis rows.
#[inline]
pub(crate) fn basis_from_powers(q: [f64; 3], c: f64, nu: f64, model: Model, out: &mut [f64]) {
    let [q0, q1, q2] = q;
    match model {
        Model::Svm => {
            out[0] = q0;
            out[1] = q1;
            out[2] = q2;
            out[3] = c * q0;
            out[4] = c * c * q0;
            out[5] = nu * q0;
            out[6] = nu * nu * q0;
            out[7] = c * q1;
            out[8] = nu * q1;
            out[9] = c * nu * q0;
        }
        Model::Cvm => {
            out[0] = q0;
            out[1] = q1;
            out[2] = q2;
            out[3] = c * q0;
            out[4] = c * c * q0;
            out[5] = c * q1;
        }
    }
}

/// The part of `beta' B(pi, c, nu)` that depends on `pi`: `a pi^2 + b pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiQuadratic {
    pub a: f64,
    pub b: f64,
}

impl PiQuadratic {
    #[inline]
    pub fn new(beta: &[f64], c: f64, nu: f64, model: Model) -> Self {
        let b = match model {
            Model::Svm => beta[1] + beta[7] * c + beta[8] * nu,
            Model::Cvm => beta[1] + beta[5] * c,
        };
        PiQuadratic { a: beta[2], b }
    }

    #[inline]
    pub fn eval(&self, pi: f64) -> f64 {
        (self.a * pi + self.b) * pi
    }

    /// Maximiser over `[lo, hi]`. Concave: clamped vertex. Otherwise the
    /// better endpoint, ties going to `lo`.
    #[inline]
    pub fn argmax(&self, lo: f64, hi: f64) -> f64 {
        if self.a < 0.0 {
            (-self.b / (2.0 * self.a)).clamp(lo, hi)
        } else if self.a > 0.0 {
            if self.eval(hi) > self.eval(lo) {
                hi
            } else {
                lo
            }
        } else if self.b > 0.0 {
            hi
        } else {
            lo
        }
    }
}

pub fn optimize_pi(beta: &[f64], c: f64, nu: f64, lo: f64, hi: f64, model: Model) -> f64 {
    PiQuadratic::new(beta, c, nu, model).argmax(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_examples() {
        let b = basis_vector(0.5, 1.0, 0.0169, Model::Svm);
        let expect = [1.0, 0.5, 0.25, 1.0, 1.0, 0.0169, 2.8561e-4, 0.5, 8.45e-3, 0.0169];
        for (x, y) in b.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15, "{b:?}");
        }
        assert_eq!(
            basis_vector(0.0, 0.0, 0.0, Model::Svm),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(basis_vector(1.0, 1.0, 0.3, Model::Cvm), vec![1.0; 6]);
    }

    fn svm_beta(quad: f64, lin: f64) -> Vec<f64> {
        let mut beta = vec![0.0; 10];
        beta[1] = lin;
        beta[2] = quad;
        beta
    }

    #[test]
    fn optimize_examples() {
        let pick = |beta: &[f64]| optimize_pi(beta, 1.0, 0.02, -0.5, 2.5, Model::Svm);
        assert_eq!(pick(&svm_beta(-1.0, 1.0)), 0.5);
        assert_eq!(pick(&svm_beta(1.0, 0.0)), 2.5);
        assert_eq!(pick(&svm_beta(0.0, 0.0)), -0.5);
        assert_eq!(pick(&svm_beta(0.0, 0.1)), 2.5);
        assert_eq!(pick(&svm_beta(0.0, -0.1)), -0.5);
        // convex with equal endpoint values ties to the lower bound
        assert_eq!(optimize_pi(&svm_beta(1.0, -1.0), 0.0, 0.0, 0.0, 1.0, Model::Svm), 0.0);
    }

    #[test]
    fn state_dependent_slope() {
        let mut beta = vec![0.0; 10];
        beta[2] = -1.0;
        beta[7] = 0.4; // pi c
        beta[8] = -10.0; // pi nu
        let got = optimize_pi(&beta, 2.0, 0.01, -0.5, 2.5, Model::Svm);
        assert!((got - (0.8 - 0.1) / 2.0).abs() < 1e-15);
        let mut cvm = vec![0.0; 6];
        cvm[2] = -2.0;
        cvm[5] = 1.0;
        assert!((optimize_pi(&cvm, 3.0, 0.5, -0.5, 2.5, Model::Cvm) - 0.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn beats_dense_grid(beta in prop::collection::vec(-5.0f64..5.0, 10),
                            c in 0.0f64..3.0, nu in 0.0f64..0.1) {
            let (lo, hi) = (-0.5, 2.5);
            let q = PiQuadratic::new(&beta, c, nu, Model::Svm);
            let best = q.argmax(lo, hi);
            prop_assert!((lo..=hi).contains(&best));
            let full = |pi: f64| {
                basis_vector(pi, c, nu, Model::Svm).iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()
            };
            let n = 30_000;
            let mut grid_best = f64::NEG_INFINITY;
            let mut grid_arg = lo;
            for i in 0..=n {
                let pi = lo + (hi - lo) * i as f64 / n as f64;
                let v = full(pi);
                if v > grid_best {
                    grid_best = v;
                    grid_arg = pi;
                }
            }
            let scale = 1.0 + grid_best.abs();
            prop_assert!(full(best) >= grid_best - 1e-9 * scale);
            if q.a < -1e-3 {
                prop_assert!((best - grid_arg).abs() <= (hi - lo) / n as f64 + 1e-9);
            }
        }
    }
}

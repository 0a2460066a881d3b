//! CRRA utility, certainty equivalents and terminal-wealth statistics.

use crate::error::{Error, Result};
use crate::params::validate_gamma;

/// `z^(1-gamma) / (1-gamma)`.
pub fn power_utility(z: f64, gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    if !(z > 0.0) {
        return Err(Error::Domain(format!("utility needs wealth > 0, got {z}")));
    }
    Ok(PowerUtility::new(gamma).value(z))
}

/// `((1-gamma) v)^(1/(1-gamma))`, the inverse of [`power_utility`].
pub fn inverse_utility(v: f64, gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    if !((1.0 - gamma) * v > 0.0) {
        return Err(Error::Domain(format!(
            "inverse utility needs (1-gamma)*v > 0, got gamma={gamma}, v={v}"
        )));
    }
    Ok(PowerUtility::new(gamma).inverse(v))
}

#[derive(Debug, Clone, Copy)]
enum Exponent {
    Integer(i32),
    /// `n + 1/2`
    HalfInteger(i32),
    General(f64),
}

/// Power utility with a fast path for the (half-)integer exponents that
/// cover the usual risk-aversion levels. Callers guarantee `z > 0`.
#[derive(Debug, Clone, Copy)]
pub struct PowerUtility {
    gamma: f64,
    one_minus_gamma: f64,
    exponent: Exponent,
}

impl PowerUtility {
    pub fn new(gamma: f64) -> Self {
        let e = 1.0 - gamma;
        let exponent = if e.fract() == 0.0 && e.abs() < 64.0 {
            Exponent::Integer(e as i32)
        } else if (2.0 * e).fract() == 0.0 && e.abs() < 64.0 {
            Exponent::HalfInteger((e - 0.5) as i32)
        } else {
            Exponent::General(e)
        };
        PowerUtility {
            gamma,
            one_minus_gamma: e,
            exponent,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        let s = 1.0 / self.one_minus_gamma;
        match self.exponent {
            Exponent::Integer(-1) => s / z,
            Exponent::Integer(-2) => s / (z * z),
            Exponent::Integer(-5) => {
                let z2 = z * z;
                s / (z2 * z2 * z)
            }
            Exponent::HalfInteger(-1) => s * z.sqrt() / z,
            Exponent::HalfInteger(0) => s * z.sqrt(),
            Exponent::Integer(n) => z.powi(n) * s,
            Exponent::HalfInteger(n) => z.powi(n) * z.sqrt() * s,
            Exponent::General(e) => z.powf(e) * s,
        }
    }

    /// `out[i] = value(z[i])`, with the exponent dispatch hoisted out of the
    /// loop so the common cases vectorise.
    pub fn values_into(&self, z: &[f64], out: &mut [f64]) {
        let s = 1.0 / self.one_minus_gamma;
        let out = &mut out[..z.len()];
        match self.exponent {
            Exponent::Integer(-1) => map_into(z, out, |x| s / x),
            Exponent::Integer(-2) => map_into(z, out, |x| s / (x * x)),
            Exponent::Integer(-5) => map_into(z, out, |x| {
                let x2 = x * x;
                s / (x2 * x2 * x)
            }),
            Exponent::HalfInteger(-1) => map_into(z, out, |x| s * x.sqrt() / x),
            Exponent::HalfInteger(0) => map_into(z, out, |x| s * x.sqrt()),
            _ => {
                for (o, &x) in out.iter_mut().zip(z) {
                    *o = self.value(x);
                }
            }
        }
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        (self.one_minus_gamma * v).powf(1.0 / self.one_minus_gamma)
    }
}

#[inline(always)]
fn map_into(z: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(z) {
        *o = f(x);
    }
}

/// Deterministic wealth with the same expected utility as the sample.
pub fn certainty_equivalent(wealth: &[f64], gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    if wealth.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(bad) = wealth.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Domain(format!("certainty equivalent needs wealth > 0, got {bad}")));
    }
    let u = PowerUtility::new(gamma);
    let mean = wealth.iter().map(|&w| u.value(w)).sum::<f64>() / wealth.len() as f64;
    Ok(u.inverse(mean))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalStats {
    pub mean: f64,
    /// Unbiased (n-1) sample variance.
    pub variance: f64,
    pub ce: f64,
    /// Coefficient of variation, `sqrt(variance) / mean`.
    pub cv: f64,
    pub n: usize,
}

pub fn summary_stats(wealth: &[f64], gamma: f64) -> Result<TerminalStats> {
    let ce = certainty_equivalent(wealth, gamma)?;
    let n = wealth.len();
    let mean = wealth.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        wealth.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(TerminalStats {
        mean,
        variance,
        ce,
        cv: variance.sqrt() / mean,
        n,
    })
}

/// Optimal constant fraction `(mu - r) / (sigma^2 gamma)` without contributions.
pub fn merton_ratio(mu: f64, r: f64, sigma: f64, gamma: f64) -> f64 {
    (mu - r) / (sigma * sigma * gamma)
}

//! Value interpolation in certainty-equivalent space.

use crate::analytics::PowerUtility;
use crate::error::{Error, Result};
use crate::params::validate_gamma;

/// Interpolates utility values between wealth nodes. Each value is mapped
/// through the inverse utility, interpolated linearly in wealth and mapped
/// back. Outside the node range the nearest node's value is returned.
///
/// `pairs` are `(wealth, utility)` sorted by wealth.
pub fn interpolate_value(wealth: f64, pairs: &[(f64, f64)], gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    let (first, last) = match (pairs.first(), pairs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptySample),
    };
    if wealth <= first.0 {
        return Ok(first.1);
    }
    if wealth >= last.0 {
        return Ok(last.1);
    }
    let upper = pairs.partition_point(|p| p.0 <= wealth);
    let (lo, hi) = (pairs[upper - 1], pairs[upper]);
    if wealth == lo.0 {
        return Ok(lo.1);
    }
    let u = PowerUtility::new(gamma);
    for v in [lo.1, hi.1] {
        if !((1.0 - gamma) * v > 0.0) {
            return Err(Error::Domain(format!("value {v} outside the utility range")));
        }
    }
    let (a, b) = (u.inverse(lo.1), u.inverse(hi.1));
    let w = (wealth - lo.0) / (hi.0 - lo.0);
    Ok(u.value(a + w * (b - a)))
}

/// As [`interpolate_value`], but outside the node range the edge segment is
/// extended linearly in transformed space, with the transformed value kept
/// at or above `floor`. This is how candidate wealths are scored during the
/// backward sweep.
pub fn interpolate_value_extrapolated(
    wealth: f64,
    pairs: &[(f64, f64)],
    gamma: f64,
    floor: f64,
) -> Result<f64> {
    if pairs.len() < 2 {
        return interpolate_value(wealth, pairs, gamma);
    }
    let n = pairs.len();
    let (lo, hi) = if wealth < pairs[0].0 {
        (pairs[0], pairs[1])
    } else if wealth > pairs[n - 1].0 {
        (pairs[n - 2], pairs[n - 1])
    } else {
        return interpolate_value(wealth, pairs, gamma);
    };
    validate_gamma(gamma)?;
    let u = PowerUtility::new(gamma);
    let (a, b) = (u.inverse(lo.1), u.inverse(hi.1));
    let w = (wealth - lo.0) / (hi.0 - lo.0);
    Ok(u.value((a + w * (b - a)).max(floor)))
}

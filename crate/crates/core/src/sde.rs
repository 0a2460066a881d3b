//! Exogenous state simulation (contribution and Heston variance) and the
//! one-step Euler map for pension wealth.
//!
//! Variance uses full-truncation Euler: the negative part of the raw variance
//! is clamped to zero inside both drift and diffusion, and the clamped value
//! is what gets stored. Contributions use the exact log-normal step, so they
//! stay strictly positive. The stock price itself is never simulated; the
//! wealth map only needs the standard-normal stock shocks, which are stored.
//!
//! Every path (or antithetic pair) draws from its own ChaCha8 stream keyed by
//! the path index, so results do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{ContributionParams, HestonParams, MarketParams, TimeGrid, VolSpec};

/// Checks `2 lambda theta > sigma_nu^2`.
pub fn validate_feller(market: &MarketParams) -> Result<()> {
    let h = market.heston().ok_or(Error::FellerNotApplicable)?;
    let (lhs, rhs) = h.feller_sides();
    if lhs > rhs {
        Ok(())
    } else {
        Err(Error::FellerViolation { lhs, rhs })
    }
}

/// Long-run variance switches to `new_theta` from `time` (years) onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaShift {
    pub time: f64,
    pub new_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub theta_shift: Option<ThetaShift>,
}

impl PathSpec {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        PathSpec {
            n_paths,
            seed,
            antithetic: false,
            theta_shift: None,
        }
    }
}

/// Simulated exogenous paths. Matrices are path-major: row `j` holds path `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePaths {
    time: TimeGrid,
    n_paths: usize,
    seed: u64,
    /// `n_paths x (n_steps + 1)`
    contribution: Vec<f64>,
    /// `n_paths x (n_steps + 1)`, Heston only.
    variance: Option<Vec<f64>>,
    /// `n_paths x n_steps`; entry `t` drives the stock over `(t, t + dt]`.
    stock_shocks: Vec<f64>,
}

impl StatePaths {
    pub fn time_grid(&self) -> TimeGrid {
        self.time
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.time.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.time.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_variance(&self) -> bool {
        self.variance.is_some()
    }

    fn stride(&self) -> usize {
        self.time.n_steps + 1
    }

    pub fn contribution_row(&self, path: usize) -> &[f64] {
        let s = self.stride();
        &self.contribution[path * s..(path + 1) * s]
    }

    pub fn variance_row(&self, path: usize) -> Option<&[f64]> {
        let s = self.stride();
        self.variance.as_ref().map(|v| &v[path * s..(path + 1) * s])
    }

    pub fn shock_row(&self, path: usize) -> &[f64] {
        let n = self.time.n_steps;
        &self.stock_shocks[path * n..(path + 1) * n]
    }

    pub fn contribution(&self, path: usize, step: usize) -> f64 {
        self.contribution[path * self.stride() + step]
    }

    pub fn variance(&self, path: usize, step: usize) -> Option<f64> {
        let s = self.stride();
        self.variance.as_ref().map(|v| v[path * s + step])
    }

    pub fn shock(&self, path: usize, step: usize) -> f64 {
        self.stock_shocks[path * self.time.n_steps + step]
    }

    pub fn contribution_column(&self, step: usize) -> Vec<f64> {
        let s = self.stride();
        self.contribution.iter().skip(step).step_by(s).copied().collect()
    }

    pub fn variance_column(&self, step: usize) -> Option<Vec<f64>> {
        let s = self.stride();
        self.variance
            .as_ref()
            .map(|v| v.iter().skip(step).step_by(s).copied().collect())
    }

    pub fn shock_column(&self, step: usize) -> Vec<f64> {
        let n = self.time.n_steps;
        self.stock_shocks.iter().skip(step).step_by(n).copied().collect()
    }
}

/// Euler-Maruyama simulation of the contribution and (for Heston) variance
/// processes on `time`, with three independent normal streams per step.
pub fn simulate_state_paths(
    market: &MarketParams,
    contribution: &ContributionParams,
    time: TimeGrid,
    spec: &PathSpec,
) -> Result<StatePaths> {
    if spec.n_paths == 0 {
        return Err(Error::invalid("algo.paths", "must be >= 1"));
    }
    market.validate()?;
    contribution.validate()?;
    if let Some(shift) = spec.theta_shift {
        if market.heston().is_none() {
            return Err(Error::invalid(
                "regime_shift",
                "a theta shift needs a Heston market",
            ));
        }
        if !(shift.new_theta > 0.0 && shift.new_theta.is_finite()) {
            return Err(Error::invalid("regime_shift.new_theta", "must be > 0"));
        }
    }

    let n = time.n_steps;
    let stride = n + 1;
    let heston = market.heston().copied();
    let mut contrib = vec![0.0; spec.n_paths * stride];
    let mut shocks = vec![0.0; spec.n_paths * n];
    let mut variance = heston.map(|_| vec![0.0; spec.n_paths * stride]);
    let shift_step = spec
        .theta_shift
        .map(|s| (s.time / time.dt - 1e-9).ceil().max(0.0) as usize);

    let kernel = PathKernel {
        time,
        contribution: *contribution,
        heston,
        shift: spec.theta_shift.zip(shift_step).map(|(s, k)| (k, s.new_theta)),
        seed: spec.seed,
        antithetic: spec.antithetic,
    };

    let failures: Vec<Option<usize>> = match variance.as_mut() {
        Some(var) => contrib
            .par_chunks_mut(stride)
            .zip(var.par_chunks_mut(stride))
            .zip(shocks.par_chunks_mut(n))
            .enumerate()
            .map(|(j, ((c, v), z))| kernel.run(j, c, Some(v), z))
            .collect(),
        None => contrib
            .par_chunks_mut(stride)
            .zip(shocks.par_chunks_mut(n))
            .enumerate()
            .map(|(j, (c, z))| kernel.run(j, c, None, z))
            .collect(),
    };
    if let Some((path, step)) = failures
        .iter()
        .enumerate()
        .find_map(|(j, f)| f.map(|s| (j, s)))
    {
        return Err(Error::SimulationFailure { path, step });
    }

    Ok(StatePaths {
        time,
        n_paths: spec.n_paths,
        seed: spec.seed,
        contribution: contrib,
        variance,
        stock_shocks: shocks,
    })
}

struct PathKernel {
    time: TimeGrid,
    contribution: ContributionParams,
    heston: Option<HestonParams>,
    shift: Option<(usize, f64)>,
    seed: u64,
    antithetic: bool,
}

impl PathKernel {
    /// Fills one path; returns the first step with a non-finite value.
    fn run(&self, path: usize, c: &mut [f64], v: Option<&mut [f64]>, z: &mut [f64]) -> Option<usize> {
        let (stream, sign) = if self.antithetic {
            (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);

        let dt = self.time.dt;
        let sqrt_dt = dt.sqrt();
        let cp = &self.contribution;
        let (c_drift, c_vol, rho_c_perp) = (
            (cp.mu_c - 0.5 * cp.sigma_c * cp.sigma_c) * dt,
            cp.sigma_c * sqrt_dt,
            (1.0 - cp.rho_c * cp.rho_c).sqrt(),
        );

        c[0] = if cp.enabled { cp.c0 } else { 0.0 };
        let mut v = v;
        let mut raw_nu = self.heston.map_or(0.0, |h| h.nu0);
        if let Some(v) = v.as_deref_mut() {
            v[0] = raw_nu;
        }

        for t in 0..self.time.n_steps {
            let z1: f64 = sign * rng.sample::<f64, _>(StandardNormal);
            let z2: f64 = sign * rng.sample::<f64, _>(StandardNormal);
            let z3: f64 = sign * rng.sample::<f64, _>(StandardNormal);
            z[t] = z1;

            c[t + 1] = if cp.enabled {
                c[t] * (c_drift + c_vol * (cp.rho_c * z1 + rho_c_perp * z3)).exp()
            } else {
                0.0
            };
            if !c[t + 1].is_finite() {
                return Some(t + 1);
            }

            if let (Some(h), Some(v)) = (self.heston.as_ref(), v.as_deref_mut()) {
                let theta = match self.shift {
                    Some((k, new_theta)) if t >= k => new_theta,
                    _ => h.theta,
                };
                let pos = raw_nu.max(0.0);
                let dw = h.rho_s * z1 + (1.0 - h.rho_s * h.rho_s).sqrt() * z2;
                raw_nu += h.lambda * (theta - pos) * dt + h.sigma_nu * pos.sqrt() * sqrt_dt * dw;
                if !raw_nu.is_finite() {
                    return Some(t + 1);
                }
                v[t + 1] = raw_nu.max(0.0);
            }
        }
        None
    }
}

/// Raw Euler step of the wealth SDE:
/// `P + (P r + P pi (mu - r) + c) dt + P pi sqrt(var) sqrt(dt) z`.
///
/// `variance` is the Heston variance, or `sigma_s^2` in the constant model.
pub fn rebalance(
    market: &MarketParams,
    wealth: f64,
    pi: f64,
    contribution: f64,
    variance: f64,
    dt: f64,
    z: f64,
) -> f64 {
    let r = market.r;
    wealth
        + (wealth * r + wealth * pi * (market.mu - r) + contribution) * dt
        + wealth * pi * variance.sqrt() * dt.sqrt() * z
}

/// Pre-computed Euler map with the positivity floor applied.
#[derive(Debug, Clone, Copy)]
pub struct WealthDynamics {
    r: f64,
    excess: f64,
    dt: f64,
    sqrt_dt: f64,
    floor: f64,
    constant_variance: Option<f64>,
}

impl WealthDynamics {
    pub fn new(market: &MarketParams, dt: f64, floor: f64) -> Self {
        WealthDynamics {
            r: market.r,
            excess: market.mu - market.r,
            dt,
            sqrt_dt: dt.sqrt(),
            floor,
            constant_variance: match market.vol {
                VolSpec::Constant { sigma_s } => Some(sigma_s * sigma_s),
                VolSpec::Heston(_) => None,
            },
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Variance driving the stock on `path` at `step`.
    #[inline]
    pub fn variance(&self, states: &StatePaths, path: usize, step: usize) -> f64 {
        match self.constant_variance {
            Some(v) => v,
            None => states.variance(path, step).unwrap_or(0.0),
        }
    }

    /// Splits the step into `base + pi * slope` (before flooring).
    #[inline]
    pub fn affine(&self, wealth: f64, contribution: f64, variance: f64, z: f64) -> (f64, f64) {
        let base = wealth + (wealth * self.r + contribution) * self.dt;
        let slope = wealth * (self.excess * self.dt + variance.sqrt() * self.sqrt_dt * z);
        (base, slope)
    }

    /// Floored step; the flag reports whether the floor was hit.
    #[inline]
    pub fn step(&self, wealth: f64, pi: f64, contribution: f64, variance: f64, z: f64) -> (f64, bool) {
        let (base, slope) = self.affine(wealth, contribution, variance, z);
        let next = base + pi * slope;
        if next < self.floor {
            (self.floor, true)
        } else {
            (next, false)
        }
    }

    pub(crate) fn requires_variance(&self) -> bool {
        self.constant_variance.is_none()
    }
}

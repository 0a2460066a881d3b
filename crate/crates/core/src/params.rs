//! Parameter blocks for the market, the contribution stream, the fund and
//! the solver, with the default values of the reference study.

use crate::error::{Error, Result};

/// Which market the solver works in. Determines the regression basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// Constant volatility (geometric Brownian motion stock).
    Cvm,
    /// Heston stochastic volatility.
    Svm,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Cvm => "cvm",
            Model::Svm => "svm",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cvm" => Ok(Model::Cvm),
            "svm" => Ok(Model::Svm),
            other => Err(Error::invalid(
                "market.model",
                format!("expected `cvm` or `svm`, got `{other}`"),
            )),
        }
    }
}

/// Heston variance block. `nu0` and `theta` are variances, not volatilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    pub nu0: f64,
    /// Mean-reversion speed per year.
    pub lambda: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Volatility of variance.
    pub sigma_nu: f64,
    /// Correlation between the stock and variance drivers.
    pub rho_s: f64,
}

impl HestonParams {
    pub fn feller_sides(&self) -> (f64, f64) {
        (2.0 * self.lambda * self.theta, self.sigma_nu * self.sigma_nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolSpec {
    Constant { sigma_s: f64 },
    Heston(HestonParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub mu: f64,
    pub r: f64,
    pub vol: VolSpec,
    pub s0: f64,
}

impl MarketParams {
    /// Heston market of the reference study.
    pub fn default_svm() -> Self {
        MarketParams {
            mu: 0.06,
            r: 0.02,
            vol: VolSpec::Heston(HestonParams {
                nu0: 0.0169,
                lambda: 5.0,
                theta: 0.0169,
                sigma_nu: 0.25,
                rho_s: -0.4,
            }),
            s0: 1.0,
        }
    }

    /// Constant-volatility market with `sigma_s` equal to the long-run Heston volatility.
    pub fn default_cvm() -> Self {
        MarketParams {
            vol: VolSpec::Constant { sigma_s: 0.13 },
            ..Self::default_svm()
        }
    }

    pub fn model(&self) -> Model {
        match self.vol {
            VolSpec::Constant { .. } => Model::Cvm,
            VolSpec::Heston(_) => Model::Svm,
        }
    }

    pub fn heston(&self) -> Option<&HestonParams> {
        match &self.vol {
            VolSpec::Heston(h) => Some(h),
            VolSpec::Constant { .. } => None,
        }
    }

    /// Checks the type invariants, including the Feller condition for Heston.
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::invalid("market.mu", "must be finite"));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(Error::invalid("market.r", "must be finite and >= 0"));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::invalid("market.s0", "must be > 0"));
        }
        match &self.vol {
            VolSpec::Constant { sigma_s } => {
                if !(*sigma_s > 0.0 && sigma_s.is_finite()) {
                    return Err(Error::invalid("market.sigma_s", "must be > 0"));
                }
            }
            VolSpec::Heston(h) => {
                positive("market.nu0", h.nu0)?;
                positive("market.lambda", h.lambda)?;
                positive("market.theta", h.theta)?;
                positive("market.sigma_nu", h.sigma_nu)?;
                open_correlation("market.rho_s", h.rho_s)?;
                crate::sde::validate_feller(self).map_err(|e| {
                    Error::invalid("market.sigma_nu", e.to_string())
                })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributionParams {
    /// Initial contribution rate, currency per year.
    pub c0: f64,
    pub mu_c: f64,
    /// Zero gives a deterministic exponential stream.
    pub sigma_c: f64,
    pub rho_c: f64,
    /// When false no contribution is paid at all.
    pub enabled: bool,
}

impl Default for ContributionParams {
    fn default() -> Self {
        ContributionParams {
            c0: 1.0,
            mu_c: 0.04,
            sigma_c: 0.1,
            rho_c: 0.05,
            enabled: true,
        }
    }
}

impl ContributionParams {
    pub fn disabled() -> Self {
        ContributionParams {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            positive("contribution.c0", self.c0)?;
        }
        if !self.mu_c.is_finite() {
            return Err(Error::invalid("contribution.mu_c", "must be finite"));
        }
        if !(self.sigma_c >= 0.0 && self.sigma_c.is_finite()) {
            return Err(Error::invalid("contribution.sigma_c", "must be >= 0"));
        }
        open_correlation("contribution.rho_c", self.rho_c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundParams {
    pub p0: f64,
    /// Horizon in years.
    pub horizon: f64,
    /// Relative risk aversion, `>= 0` and `!= 1`.
    pub gamma: f64,
}

impl Default for FundParams {
    fn default() -> Self {
        FundParams {
            p0: 5.0,
            horizon: 10.0,
            gamma: 3.0,
        }
    }
}

impl FundParams {
    pub fn validate(&self) -> Result<()> {
        positive("fund.p0", self.p0)?;
        positive("fund.horizon", self.horizon)?;
        validate_gamma(self.gamma)
    }

    /// Wealth floor applied after every Euler step.
    pub fn wealth_floor(&self) -> f64 {
        1e-6 * self.p0
    }
}

pub(crate) fn validate_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("fund.gamma", "must be finite and >= 0"));
    }
    if gamma == 1.0 {
        return Err(Error::invalid(
            "fund.gamma",
            "gamma = 1 is excluded (CRRA power utility is undefined there; log utility is not supported)",
        ));
    }
    Ok(())
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgoParams {
    pub steps_per_year: usize,
    pub paths: usize,
    pub pi_points: usize,
    /// Number of wealth in-between points after the first step.
    pub wealth_points: usize,
    pub pi_lo: f64,
    pub pi_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    /// Recompute the wealth step size every year (long horizons).
    pub long_horizon_stepping: bool,
    /// Draw paths in antithetic pairs.
    pub antithetic: bool,
}

impl Default for AlgoParams {
    fn default() -> Self {
        AlgoParams {
            steps_per_year: 20,
            paths: 50_000,
            pi_points: 31,
            wealth_points: 3,
            pi_lo: -0.5,
            pi_hi: 2.5,
            q_lo: 0.1,
            q_hi: 0.1,
            long_horizon_stepping: false,
            antithetic: true,
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_year < 1 {
            return Err(Error::invalid("algo.steps_per_year", "must be >= 1"));
        }
        if self.paths < 1 {
            return Err(Error::invalid("algo.paths", "must be >= 1"));
        }
        if self.pi_points < 2 {
            return Err(Error::invalid("algo.pi_points", "must be >= 2"));
        }
        if self.wealth_points < 1 {
            return Err(Error::invalid("algo.wealth_points", "must be >= 1"));
        }
        if !(self.pi_lo.is_finite() && self.pi_hi.is_finite() && self.pi_lo < self.pi_hi) {
            return Err(Error::invalid("algo.pi_lo", "need finite pi_lo < pi_hi"));
        }
        for (name, q) in [("algo.q_lo", self.q_lo), ("algo.q_hi", self.q_hi)] {
            if !(q > 0.0 && q < 0.5) {
                return Err(Error::invalid(name, "must lie in (0, 0.5)"));
            }
        }
        Ok(())
    }
}

/// Discrete time grid {0, dt, ..., T} with dt = 1/N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps_per_year: usize,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(steps_per_year: usize, horizon: f64) -> Result<Self> {
        if steps_per_year == 0 {
            return Err(Error::invalid("algo.steps_per_year", "must be >= 1"));
        }
        let raw = horizon * steps_per_year as f64;
        let n_steps = raw.round();
        if !(n_steps >= 1.0) || (raw - n_steps).abs() > 1e-9 * raw.max(1.0) {
            return Err(Error::invalid(
                "fund.horizon",
                format!("horizon * steps_per_year must be a positive integer, got {raw}"),
            ));
        }
        Ok(TimeGrid {
            steps_per_year,
            n_steps: n_steps as usize,
            dt: 1.0 / steps_per_year as f64,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Index of `t` on the grid, if it lies on it.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let raw = t * self.steps_per_year as f64;
        let n = raw.round();
        if n < 0.0 || (raw - n).abs() > 1e-9 * raw.abs().max(1.0) || n as usize > self.n_steps {
            return None;
        }
        Some(n as usize)
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {x}")))
    }
}

fn open_correlation(name: &str, rho: f64) -> Result<()> {
    if rho > -1.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in (-1, 1), got {rho}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        MarketParams::default_svm().validate().unwrap();
        MarketParams::default_cvm().validate().unwrap();
        ContributionParams::default().validate().unwrap();
        FundParams::default().validate().unwrap();
        AlgoParams::default().validate().unwrap();
    }

    #[test]
    fn gamma_one_rejected() {
        let err = validate_gamma(1.0).unwrap_err();
        assert!(err.to_string().contains("fund.gamma"));
        assert!(err.to_string().contains("CRRA"));
    }

    #[test]
    fn time_grid_steps() {
        let g = TimeGrid::new(20, 10.0).unwrap();
        assert_eq!(g.n_steps, 200);
        assert_eq!(g.step_of(5.0), Some(100));
        assert_eq!(g.step_of(5.01), None);
        assert_eq!(g.step_of(10.5), None);
        assert!(TimeGrid::new(20, 0.01).is_err());
    }

    #[test]
    fn bad_quantiles_rejected() {
        let a = AlgoParams {
            q_hi: 0.5,
            ..AlgoParams::default()
        };
        assert!(a.validate().is_err());
    }
}

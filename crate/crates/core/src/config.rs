//! Run configuration in TOML.
//!
//! Every key is optional; missing keys take the reference-study defaults and
//! unknown keys are rejected. Layout:
//!
//! ```toml
//! label = "run"
//! seed = 1
//! out_dir = "out"
//! scatter_times = [5.0]
//!
//! [market]        # model = "svm" | "cvm", mu, r, s0, sigma_s (cvm only),
//!                 # nu0, lambda, theta, sigma_nu, rho_s (svm only)
//! [contribution]  # enabled, c0, mu_c, sigma_c, rho_c
//! [fund]          # p0, horizon, gamma
//! [algo]          # steps_per_year, paths, pi_points, wealth_points, pi_lo,
//!                 # pi_hi, q_lo, q_hi, long_horizon_stepping, antithetic
//! [regime_shift]  # time, new_theta  (optional)
//! [sweep]         # axis, values     (optional)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{Scenario, SweepAxis, SweepSpec};
use crate::params::{
    AlgoParams, ContributionParams, FundParams, HestonParams, MarketParams, Model, VolSpec,
};
use crate::sde::ThetaShift;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    pub out_dir: String,
    /// Decision times (years) at which scatter files are written.
    pub scatter_times: Vec<f64>,
    pub market: MarketSection,
    pub contribution: ContributionSection,
    pub fund: FundSection,
    pub algo: AlgoSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime_shift: Option<RegimeShiftSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: "run".into(),
            seed: 1,
            out_dir: "out".into(),
            scatter_times: Vec::new(),
            market: MarketSection::default(),
            contribution: ContributionSection::default(),
            fund: FundSection::default(),
            algo: AlgoSection::default(),
            regime_shift: None,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub model: String,
    pub mu: f64,
    pub r: f64,
    pub s0: f64,
    pub sigma_s: f64,
    pub nu0: f64,
    pub lambda: f64,
    pub theta: f64,
    pub sigma_nu: f64,
    pub rho_s: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        let m = MarketParams::default_svm();
        let h = *m.heston().expect("default market is Heston");
        let sigma_s = match MarketParams::default_cvm().vol {
            VolSpec::Constant { sigma_s } => sigma_s,
            VolSpec::Heston(_) => unreachable!(),
        };
        MarketSection {
            model: Model::Svm.as_str().into(),
            mu: m.mu,
            r: m.r,
            s0: m.s0,
            sigma_s,
            nu0: h.nu0,
            lambda: h.lambda,
            theta: h.theta,
            sigma_nu: h.sigma_nu,
            rho_s: h.rho_s,
        }
    }
}

impl MarketSection {
    pub fn params(&self) -> Result<MarketParams> {
        let vol = match self.model.parse::<Model>()? {
            Model::Cvm => VolSpec::Constant { sigma_s: self.sigma_s },
            Model::Svm => VolSpec::Heston(HestonParams {
                nu0: self.nu0,
                lambda: self.lambda,
                theta: self.theta,
                sigma_nu: self.sigma_nu,
                rho_s: self.rho_s,
            }),
        };
        Ok(MarketParams {
            mu: self.mu,
            r: self.r,
            vol,
            s0: self.s0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContributionSection {
    pub enabled: bool,
    pub c0: f64,
    pub mu_c: f64,
    pub sigma_c: f64,
    pub rho_c: f64,
}

impl Default for ContributionSection {
    fn default() -> Self {
        let c = ContributionParams::default();
        ContributionSection {
            enabled: c.enabled,
            c0: c.c0,
            mu_c: c.mu_c,
            sigma_c: c.sigma_c,
            rho_c: c.rho_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FundSection {
    pub p0: f64,
    pub horizon: f64,
    pub gamma: f64,
}

impl Default for FundSection {
    fn default() -> Self {
        let f = FundParams::default();
        FundSection {
            p0: f.p0,
            horizon: f.horizon,
            gamma: f.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoSection {
    pub steps_per_year: usize,
    pub paths: usize,
    pub pi_points: usize,
    pub wealth_points: usize,
    pub pi_lo: f64,
    pub pi_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub long_horizon_stepping: bool,
    pub antithetic: bool,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let a = AlgoParams::default();
        AlgoSection {
            steps_per_year: a.steps_per_year,
            paths: a.paths,
            pi_points: a.pi_points,
            wealth_points: a.wealth_points,
            pi_lo: a.pi_lo,
            pi_hi: a.pi_hi,
            q_lo: a.q_lo,
            q_hi: a.q_hi,
            long_horizon_stepping: a.long_horizon_stepping,
            antithetic: a.antithetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeShiftSection {
    pub time: f64,
    pub new_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    pub values: Vec<f64>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    /// Checks every constraint; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.scenario()?.validate()?;
        if let Some(s) = &self.sweep {
            let axis: SweepAxis = s.axis.parse()?;
            if s.values.is_empty() {
                return Err(Error::invalid("sweep.values", "must not be empty"));
            }
            let mut probe = self.scenario()?;
            for &v in &s.values {
                axis.apply(&mut probe, v)?;
                probe.validate()?;
            }
        }
        let time = self.scenario()?.time_grid()?;
        for &t in &self.scatter_times {
            match time.step_of(t) {
                Some(k) if k < time.n_steps => {}
                _ => {
                    return Err(Error::invalid(
                        "scatter_times",
                        format!("{t} is not a decision time of the grid"),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let market = self.market.params()?;
        let c = &self.contribution;
        let a = &self.algo;
        let mut s = Scenario::new(self.label.clone(), market);
        s.contribution = ContributionParams {
            c0: c.c0,
            mu_c: c.mu_c,
            sigma_c: c.sigma_c,
            rho_c: c.rho_c,
            enabled: c.enabled,
        };
        s.fund = FundParams {
            p0: self.fund.p0,
            horizon: self.fund.horizon,
            gamma: self.fund.gamma,
        };
        s.algo = AlgoParams {
            steps_per_year: a.steps_per_year,
            paths: a.paths,
            pi_points: a.pi_points,
            wealth_points: a.wealth_points,
            pi_lo: a.pi_lo,
            pi_hi: a.pi_hi,
            q_lo: a.q_lo,
            q_hi: a.q_hi,
            long_horizon_stepping: a.long_horizon_stepping,
            antithetic: a.antithetic,
        };
        s.seed = self.seed;
        s.regime_shift = self.regime_shift.map(|r| ThetaShift {
            time: r.time,
            new_theta: r.new_theta,
        });
        Ok(s)
    }

    pub fn sweep_spec(&self) -> Result<Option<SweepSpec>> {
        self.sweep
            .as_ref()
            .map(|s| {
                Ok(SweepSpec {
                    base: self.scenario()?,
                    axis: s.axis.parse()?,
                    values: s.values.clone(),
                })
            })
            .transpose()
    }

    /// The configuration that reproduces `s` (an external policy is not
    /// representable and is dropped). Heston keys of a constant-volatility
    /// market keep their defaults.
    pub fn from_scenario(s: &Scenario) -> Self {
        let mut cfg = RunConfig {
            label: s.label.clone(),
            seed: s.seed,
            ..RunConfig::default()
        };
        let m = &mut cfg.market;
        m.model = s.market.model().as_str().into();
        m.mu = s.market.mu;
        m.r = s.market.r;
        m.s0 = s.market.s0;
        match s.market.vol {
            VolSpec::Constant { sigma_s } => m.sigma_s = sigma_s,
            VolSpec::Heston(h) => {
                m.nu0 = h.nu0;
                m.lambda = h.lambda;
                m.theta = h.theta;
                m.sigma_nu = h.sigma_nu;
                m.rho_s = h.rho_s;
            }
        }
        let c = s.contribution;
        cfg.contribution = ContributionSection {
            enabled: c.enabled,
            c0: c.c0,
            mu_c: c.mu_c,
            sigma_c: c.sigma_c,
            rho_c: c.rho_c,
        };
        cfg.fund = FundSection {
            p0: s.fund.p0,
            horizon: s.fund.horizon,
            gamma: s.fund.gamma,
        };
        let a = s.algo;
        cfg.algo = AlgoSection {
            steps_per_year: a.steps_per_year,
            paths: a.paths,
            pi_points: a.pi_points,
            wealth_points: a.wealth_points,
            pi_lo: a.pi_lo,
            pi_hi: a.pi_hi,
            q_lo: a.q_lo,
            q_hi: a.q_hi,
            long_horizon_stepping: a.long_horizon_stepping,
            antithetic: a.antithetic,
        };
        cfg.regime_shift = s.regime_shift.map(|r| RegimeShiftSection {
            time: r.time,
            new_theta: r.new_theta,
        });
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

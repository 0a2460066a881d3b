//! Scenario runner: fit a policy, simulate it forward on fresh paths and
//! summarise the terminal wealth. Sweeps, scatter slices, horizon
//! prolongation and the long-run variance stress build on it.
//!
//! Seeds: the backward sweep uses the scenario seed, the forward pass a seed
//! derived from it. Sweep cells share the scenario seed, so differences
//! between cells are driven by parameters, not by sampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::analytics::{summary_stats, TerminalStats};
use crate::error::{Error, Result};
use crate::lsmc::{
    backward_sweep, build_pi_grid, build_wealth_grid, forward_simulate, PathMeans, PolicySurface,
    SimulationResult, WealthGrid,
};
use crate::params::{AlgoParams, ContributionParams, FundParams, MarketParams, Model, TimeGrid, VolSpec};
use crate::sde::{simulate_state_paths, PathSpec, ThetaShift};

/// A policy together with everything needed to apply it.
#[derive(Debug, Clone)]
pub struct FittedPolicy {
    pub market: MarketParams,
    pub contribution: ContributionParams,
    pub fund: FundParams,
    pub algo: AlgoParams,
    pub grid: WealthGrid,
    pub surface: PolicySurface,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default)]
pub enum PolicySource {
    /// Fit the policy in the scenario's own market.
    #[default]
    Fit,
    /// Apply a policy fitted elsewhere.
    External(Arc<FittedPolicy>),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub market: MarketParams,
    pub contribution: ContributionParams,
    pub fund: FundParams,
    pub algo: AlgoParams,
    pub seed: u64,
    pub policy: PolicySource,
    /// Long-run variance change in the forward world only.
    pub regime_shift: Option<ThetaShift>,
}

impl Scenario {
    pub fn new(label: impl Into<String>, market: MarketParams) -> Self {
        Scenario {
            label: label.into(),
            market,
            contribution: ContributionParams::default(),
            fund: FundParams::default(),
            algo: AlgoParams::default(),
            seed: 1,
            policy: PolicySource::Fit,
            regime_shift: None,
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.algo.steps_per_year, self.fund.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.contribution.validate()?;
        self.fund.validate()?;
        self.algo.validate()?;
        self.time_grid()?;
        if let Some(shift) = self.regime_shift {
            if !(shift.time > 0.0 && shift.time < self.fund.horizon) {
                return Err(Error::invalid("regime_shift.time", "must lie strictly inside (0, T)"));
            }
            if self.market.model() != Model::Svm {
                return Err(Error::invalid("regime_shift", "a theta shift needs a Heston market"));
            }
        }
        Ok(())
    }
}

/// Seed for the fresh forward paths of a scenario seeded with `seed`.
pub fn forward_seed(seed: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub label: String,
    pub seed: u64,
    pub policy: Arc<FittedPolicy>,
    pub simulation: SimulationResult,
    pub stats: TerminalStats,
    pub means: PathMeans,
    pub elapsed: Duration,
}

fn in_scenario<T>(label: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Scenario {
        label: label.to_string(),
        source: Box::new(e),
    })
}

/// Simulates the backward paths, builds the grids and runs the backward sweep.
pub fn fit_policy(s: &Scenario) -> Result<FittedPolicy> {
    in_scenario(&s.label, fit_inner(s))
}

fn fit_inner(s: &Scenario) -> Result<FittedPolicy> {
    s.validate()?;
    let start = Instant::now();
    let time = s.time_grid()?;
    let spec = PathSpec {
        antithetic: s.algo.antithetic,
        ..PathSpec::new(s.algo.paths, s.seed)
    };
    let states = simulate_state_paths(&s.market, &s.contribution, time, &spec)?;
    let grid = build_wealth_grid(&states, &s.market, &s.fund, &s.algo)?;
    let surface = backward_sweep(&states, &grid, &build_pi_grid(&s.algo), &s.market, &s.fund)?;
    Ok(FittedPolicy {
        market: s.market,
        contribution: s.contribution,
        fund: s.fund,
        algo: s.algo,
        grid,
        surface,
        elapsed: start.elapsed(),
    })
}

/// Full pipeline: fit (unless the policy is external), fresh forward paths,
/// terminal statistics.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioResult> {
    in_scenario(&s.label, run_inner(s))
}

fn run_inner(s: &Scenario) -> Result<ScenarioResult> {
    s.validate()?;
    let start = Instant::now();
    let policy = match &s.policy {
        PolicySource::Fit => Arc::new(fit_inner(s)?),
        PolicySource::External(p) => {
            if p.fund.p0 != s.fund.p0 || p.fund.gamma != s.fund.gamma {
                return Err(Error::Mismatch(
                    "external policy was fitted for a different fund".into(),
                ));
            }
            Arc::clone(p)
        }
    };
    let spec = PathSpec {
        antithetic: s.algo.antithetic,
        theta_shift: s.regime_shift,
        ..PathSpec::new(s.algo.paths, forward_seed(s.seed))
    };
    let states = Arc::new(simulate_state_paths(&s.market, &s.contribution, s.time_grid()?, &spec)?);
    let simulation = forward_simulate(&policy.surface, &policy.grid, &s.market, &s.fund, states)?;
    let stats = summary_stats(&simulation.terminal_wealth(), s.fund.gamma)?;
    let means = simulation.path_means();
    Ok(ScenarioResult {
        label: s.label.clone(),
        seed: s.seed,
        policy,
        simulation,
        stats,
        means,
        elapsed: start.elapsed(),
    })
}

/// A scalar scenario field that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Mu,
    RhoS,
    Theta,
    SigmaNu,
    Gamma,
    P0,
    C0,
    MuC,
    SigmaC,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 9] = [
        SweepAxis::Mu,
        SweepAxis::RhoS,
        SweepAxis::Theta,
        SweepAxis::SigmaNu,
        SweepAxis::Gamma,
        SweepAxis::P0,
        SweepAxis::C0,
        SweepAxis::MuC,
        SweepAxis::SigmaC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Mu => "mu",
            SweepAxis::RhoS => "rho_s",
            SweepAxis::Theta => "theta",
            SweepAxis::SigmaNu => "sigma_nu",
            SweepAxis::Gamma => "gamma",
            SweepAxis::P0 => "p0",
            SweepAxis::C0 => "c0",
            SweepAxis::MuC => "mu_c",
            SweepAxis::SigmaC => "sigma_c",
        }
    }

    /// Sets the field on `s` to `value`.
    pub fn apply(self, s: &mut Scenario, value: f64) -> Result<()> {
        fn heston(axis: SweepAxis, s: &mut Scenario) -> Result<&mut crate::params::HestonParams> {
            match &mut s.market.vol {
                VolSpec::Heston(h) => Ok(h),
                VolSpec::Constant { .. } => Err(Error::invalid(
                    "sweep.axis",
                    format!("`{axis}` needs a Heston market"),
                )),
            }
        }
        match self {
            SweepAxis::Mu => s.market.mu = value,
            SweepAxis::RhoS => heston(self, s)?.rho_s = value,
            SweepAxis::Theta => heston(self, s)?.theta = value,
            SweepAxis::SigmaNu => heston(self, s)?.sigma_nu = value,
            SweepAxis::Gamma => s.fund.gamma = value,
            SweepAxis::P0 => s.fund.p0 = value,
            SweepAxis::C0 => s.contribution.c0 = value,
            SweepAxis::MuC => s.contribution.mu_c = value,
            SweepAxis::SigmaC => s.contribution.sigma_c = value,
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|a| a.as_str()).collect();
                Error::invalid("sweep.axis", format!("unknown axis `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// What a sweep keeps from each run.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub label: String,
    pub seed: u64,
    pub stats: TerminalStats,
    pub means: PathMeans,
    pub elapsed: Duration,
}

impl From<&ScenarioResult> for CellSummary {
    fn from(r: &ScenarioResult) -> Self {
        CellSummary {
            label: r.label.clone(),
            seed: r.seed,
            stats: r.stats,
            means: r.means.clone(),
            elapsed: r.elapsed,
        }
    }
}

#[derive(Debug)]
pub struct SweepCell {
    pub value: f64,
    pub outcome: Result<CellSummary>,
}

/// Runs one scenario per value. Cells run one after another (each one is
/// parallel inside) so that only one set of paths is in memory at a time.
/// A failing cell is recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() {
        return Err(Error::invalid("sweep.values", "must not be empty"));
    }
    Ok(spec
        .values
        .iter()
        .map(|&value| {
            let mut s = spec.base.clone();
            s.label = format!("{}_{}={}", spec.base.label, spec.axis, value);
            let outcome = spec
                .axis
                .apply(&mut s, value)
                .and_then(|_| run_scenario(&s))
                .map(|r| CellSummary::from(&r));
            SweepCell { value, outcome }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub wealth: f64,
    pub pi: f64,
    /// Instantaneous variance (constant `sigma^2` without Heston).
    pub nu: f64,
}

/// Per-path `(wealth, allocation, variance)` at decision time `t`, optionally
/// restricted to paths with variance in `[lo, hi]`.
pub fn scatter_slice(result: &SimulationResult, t: f64, vol_band: Option<(f64, f64)>) -> Result<Vec<ScatterPoint>> {
    let time = result.time_grid();
    let step = time.step_of(t).filter(|&k| k < time.n_steps).ok_or(Error::OffGrid(t))?;
    Ok((0..result.n_paths())
        .map(|j| ScatterPoint {
            wealth: result.wealth(j, step),
            pi: result.strategy(j, step),
            nu: result.variance(j, step),
        })
        .filter(|p| vol_band.is_none_or(|(lo, hi)| p.nu >= lo && p.nu <= hi))
        .collect())
}

/// Inner decile boundaries of the wealth values in `points`.
pub fn wealth_decile_edges(points: &[ScatterPoint]) -> Vec<f64> {
    let mut w: Vec<f64> = points.iter().map(|p| p.wealth).collect();
    w.sort_by(f64::total_cmp);
    if w.is_empty() {
        return Vec::new();
    }
    (1..10).map(|d| w[(d * w.len() / 10).min(w.len() - 1)]).collect()
}

/// Range (max − min) of the allocation inside each wealth bin delimited by
/// `edges`; empty bins give `None`.
pub fn spread_by_wealth_bin(points: &[ScatterPoint], edges: &[f64]) -> Vec<Option<f64>> {
    let mut bins = vec![(f64::INFINITY, f64::NEG_INFINITY); edges.len() + 1];
    for p in points {
        let b = edges.partition_point(|&e| e <= p.wealth);
        bins[b].0 = bins[b].0.min(p.pi);
        bins[b].1 = bins[b].1.max(p.pi);
    }
    bins.into_iter()
        .map(|(lo, hi)| (hi >= lo).then_some(hi - lo))
        .collect()
}

/// Mean over bins of [`spread_by_wealth_bin`], ignoring empty bins.
pub fn mean_spread(points: &[ScatterPoint], edges: &[f64]) -> f64 {
    let spreads: Vec<f64> = spread_by_wealth_bin(points, edges).into_iter().flatten().collect();
    spreads.iter().sum::<f64>() / spreads.len() as f64
}

/// Cross-path mean of `P_t / C_t` at time `t`.
pub fn wealth_to_contribution(result: &SimulationResult, t: f64) -> Result<f64> {
    let step = result.time_grid().step_of(t).ok_or(Error::OffGrid(t))?;
    let states = result.states();
    let mut total = 0.0;
    for j in 0..result.n_paths() {
        let c = states.contribution(j, step);
        if !(c > 0.0) {
            return Err(Error::Domain("wealth-to-contribution ratio needs a positive contribution".into()));
        }
        total += result.wealth(j, step) / c;
    }
    Ok(total / result.n_paths() as f64)
}

#[derive(Debug, Clone)]
pub struct ProlongationReport {
    pub base: CellSummary,
    pub long: CellSummary,
    /// Mean allocation at `t = 0` for the base and the long horizon.
    pub initial_pi: (f64, f64),
    /// `E[P_t / C_t]` on the long run at `ratio_time`.
    pub ratio_time: f64,
    pub wealth_to_contribution: f64,
}

/// Runs `base` and the same scenario with horizon `horizon` (annual wealth
/// step recalculation), comparing initial allocations and reporting the
/// wealth-to-contribution ratio of the long run at `ratio_time`.
pub fn run_prolongation(base: &Scenario, horizon: f64, ratio_time: f64) -> Result<ProlongationReport> {
    let short = run_scenario(base)?;
    let short = CellSummary::from(&short);
    let mut long = base.clone();
    long.label = format!("{}_T={}", base.label, horizon);
    long.fund.horizon = horizon;
    long.algo.long_horizon_stepping = true;
    let long_run = run_scenario(&long)?;
    let wealth_to_contribution = in_scenario(&long.label, wealth_to_contribution(&long_run.simulation, ratio_time))?;
    let long_summary = CellSummary::from(&long_run);
    Ok(ProlongationReport {
        initial_pi: (short.means.mean_pi[0], long_summary.means.mean_pi[0]),
        base: short,
        long: long_summary,
        ratio_time,
        wealth_to_contribution,
    })
}

#[derive(Debug, Clone)]
pub struct ThetaShiftReport {
    pub unshifted: CellSummary,
    pub shifted: CellSummary,
}

/// Fits `base` once, then applies that policy both in the original world and
/// in a world whose long-run variance changes per `shift`. Both forward runs
/// use the same paths up to the shift.
pub fn run_theta_shift(base: &Scenario, shift: ThetaShift) -> Result<ThetaShiftReport> {
    let unshifted = run_scenario(base)?;
    let mut stressed = base.clone();
    stressed.label = format!("{}_theta_shift", base.label);
    stressed.policy = PolicySource::External(Arc::clone(&unshifted.policy));
    stressed.regime_shift = Some(shift);
    let shifted = run_scenario(&stressed)?;
    Ok(ThetaShiftReport {
        unshifted: CellSummary::from(&unshifted),
        shifted: CellSummary::from(&shifted),
    })
}

/// Trailing moving average with `window` points (first value at index
/// `window - 1`).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Means over consecutive non-overlapping blocks of `block` points; a
/// trailing partial block is dropped.
pub fn block_means(series: &[f64], block: usize) -> Vec<f64> {
    if block == 0 {
        return Vec::new();
    }
    series
        .chunks_exact(block)
        .map(|w| w.iter().sum::<f64>() / block as f64)
        .collect()
}

//! Forward simulation of a fitted policy on fresh state paths.

use std::sync::Arc;

use rayon::prelude::*;

use super::backward::PolicySurface;
use super::grid::{Bracket, WealthGrid};
use crate::error::{Error, Result};
use crate::params::{FundParams, MarketParams, Model, TimeGrid, VolSpec};
use crate::sde::{StatePaths, WealthDynamics};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardDiagnostics {
    /// Steps whose wealth hit the positivity floor.
    pub floored: u64,
    /// Decisions taken below the lowest wealth node.
    pub below_grid: u64,
    /// Decisions taken above the highest wealth node.
    pub above_grid: u64,
}

/// Wealth and allocation along every forward path.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    states: Arc<StatePaths>,
    time: TimeGrid,
    /// Row-major `paths x (steps + 1)`.
    wealth: Vec<f64>,
    /// Row-major `paths x steps`.
    strategy: Vec<f64>,
    /// `sigma^2` when the world has constant volatility.
    constant_variance: Option<f64>,
    diagnostics: ForwardDiagnostics,
}

/// Cross-path means at each decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeans {
    pub time: Vec<f64>,
    pub mean_pi: Vec<f64>,
    pub mean_wealth: Vec<f64>,
    pub mean_contribution: Vec<f64>,
}

impl SimulationResult {
    pub fn states(&self) -> &StatePaths {
        &self.states
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time
    }

    pub fn n_paths(&self) -> usize {
        self.states.n_paths()
    }

    pub fn diagnostics(&self) -> &ForwardDiagnostics {
        &self.diagnostics
    }

    pub fn wealth_row(&self, path: usize) -> &[f64] {
        let n = self.time.n_steps + 1;
        &self.wealth[path * n..(path + 1) * n]
    }

    pub fn strategy_row(&self, path: usize) -> &[f64] {
        let n = self.time.n_steps;
        &self.strategy[path * n..(path + 1) * n]
    }

    pub fn wealth(&self, path: usize, step: usize) -> f64 {
        self.wealth_row(path)[step]
    }

    pub fn strategy(&self, path: usize, step: usize) -> f64 {
        self.strategy_row(path)[step]
    }

    /// Instantaneous stock variance seen by `path` at `step`.
    pub fn variance(&self, path: usize, step: usize) -> f64 {
        match self.constant_variance {
            Some(v) => v,
            None => self.states.variance(path, step).unwrap_or(f64::NAN),
        }
    }

    pub fn wealth_column(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|j| self.wealth(j, step)).collect()
    }

    pub fn strategy_column(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|j| self.strategy(j, step)).collect()
    }

    pub fn terminal_wealth(&self) -> Vec<f64> {
        self.wealth_column(self.time.n_steps)
    }

    pub fn path_means(&self) -> PathMeans {
        let n = self.n_paths() as f64;
        let steps = self.time.n_steps;
        let mean = |f: &dyn Fn(usize) -> f64| (0..self.n_paths()).map(f).sum::<f64>() / n;
        PathMeans {
            time: (0..steps).map(|t| self.time.time(t)).collect(),
            mean_pi: (0..steps).map(|t| mean(&|j| self.strategy(j, t))).collect(),
            mean_wealth: (0..steps).map(|t| mean(&|j| self.wealth(j, t))).collect(),
            mean_contribution: (0..steps)
                .map(|t| mean(&|j| self.states.contribution(j, t)))
                .collect(),
        }
    }
}

/// Policy allocation at `step` for wealth `wealth`: linear blend of the two
/// bracketing nodes' maximisers, or the closest node outside the grid.
pub fn policy_allocation(
    surface: &PolicySurface,
    grid: &WealthGrid,
    step: usize,
    wealth: f64,
    c: f64,
    nu: f64,
) -> (f64, Bracket) {
    let level = grid.level(step);
    let bracket = level.bracket(wealth);
    let pi = match bracket {
        Bracket::Below => surface.strategy(step, 0, c, nu),
        Bracket::Above => surface.strategy(step, level.intervals, c, nu),
        Bracket::Inside { k, omega } => {
            let lo = surface.strategy(step, k, c, nu);
            if omega == 0.0 {
                lo
            } else {
                let (pi_lo, pi_hi) = surface.pi_bounds();
                ((1.0 - omega) * lo + omega * surface.strategy(step, k + 1, c, nu)).clamp(pi_lo, pi_hi)
            }
        }
    };
    (pi, bracket)
}

/// Applies `surface` along `states` in the market `world`, starting from
/// `fund.p0`. The world may differ from the market the policy was fitted in.
pub fn forward_simulate(
    surface: &PolicySurface,
    grid: &WealthGrid,
    world: &MarketParams,
    fund: &FundParams,
    states: Arc<StatePaths>,
) -> Result<SimulationResult> {
    let time = states.time_grid();
    let steps = time.n_steps;
    if surface.time_grid() != time || grid.n_steps() != steps {
        return Err(Error::Mismatch(format!(
            "policy has {} steps of {}, paths have {} steps of {}",
            surface.time_grid().n_steps,
            surface.time_grid().dt,
            steps,
            time.dt
        )));
    }
    for t in 0..steps {
        if surface.n_nodes(t) != grid.level(t).n_nodes() {
            return Err(Error::Mismatch(format!("policy and wealth grid disagree at step {t}")));
        }
    }
    let dynamics = WealthDynamics::new(world, time.dt, fund.wealth_floor());
    let needs_nu = surface.model() == Model::Svm;
    if (needs_nu || dynamics.requires_variance()) && !states.has_variance() {
        return Err(Error::Mismatch("policy or market needs variance paths".into()));
    }

    let n = states.n_paths();
    let mut wealth = vec![0.0; n * (steps + 1)];
    let mut strategy = vec![0.0; n * steps];
    let diagnostics = wealth
        .par_chunks_mut(steps + 1)
        .zip(strategy.par_chunks_mut(steps.max(1)))
        .enumerate()
        .map(|(j, (w_row, pi_row))| {
            let mut d = ForwardDiagnostics::default();
            w_row[0] = fund.p0;
            for t in 0..steps {
                let c = states.contribution(j, t);
                let nu = states.variance(j, t).unwrap_or(0.0);
                let (pi, bracket) = policy_allocation(surface, grid, t, w_row[t], c, nu);
                match bracket {
                    Bracket::Below => d.below_grid += 1,
                    Bracket::Above => d.above_grid += 1,
                    Bracket::Inside { .. } => {}
                }
                let var = dynamics.variance(&states, j, t);
                let (next, hit) = dynamics.step(w_row[t], pi, c, var, states.shock(j, t));
                d.floored += hit as u64;
                pi_row[t] = pi;
                w_row[t + 1] = next;
            }
            d
        })
        .reduce(ForwardDiagnostics::default, |a, b| ForwardDiagnostics {
            floored: a.floored + b.floored,
            below_grid: a.below_grid + b.below_grid,
            above_grid: a.above_grid + b.above_grid,
        });
    if steps == 0 {
        strategy.clear();
    }

    Ok(SimulationResult {
        states,
        time,
        wealth,
        strategy,
        constant_variance: match world.vol {
            VolSpec::Constant { sigma_s } => Some(sigma_s * sigma_s),
            VolSpec::Heston(_) => None,
        },
        diagnostics,
    })
}

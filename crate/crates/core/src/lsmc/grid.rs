//! Allocation grid and the quantile-driven wealth grid.

use crate::error::{Error, Result};
use crate::params::{AlgoParams, FundParams, MarketParams};
use crate::sde::{StatePaths, WealthDynamics};

/// Uniformly spaced allocation fractions on `[pi_lo, pi_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiGrid {
    points: Vec<f64>,
}

impl PiGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        let n = self.points.len();
        (self.points[n - 1] - self.points[0]) / (n - 1) as f64
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

pub fn build_pi_grid(algo: &AlgoParams) -> PiGrid {
    let n = algo.pi_points.max(2);
    let h = (algo.pi_hi - algo.pi_lo) / (n - 1) as f64;
    let mut points: Vec<f64> = (0..n).map(|i| algo.pi_lo + i as f64 * h).collect();
    points[n - 1] = algo.pi_hi;
    PiGrid { points }
}

/// Wealth nodes `p_min + k * step` for `k = 0..=intervals` at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLevel {
    pub p_min: f64,
    /// Upper quantile bound; not a node in general.
    pub p_max: f64,
    pub step: f64,
    pub intervals: usize,
}

/// Position of a wealth value relative to a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bracket {
    Below,
    Above,
    /// Between node `k` and `k + 1` with weight `omega` on the upper node.
    Inside { k: usize, omega: f64 },
}

impl GridLevel {
    pub fn n_nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.p_min + k as f64 * self.step
    }

    pub fn top(&self) -> f64 {
        self.node(self.intervals)
    }

    pub fn bracket(&self, wealth: f64) -> Bracket {
        if self.intervals == 0 {
            return if wealth < self.p_min {
                Bracket::Below
            } else if wealth > self.p_min {
                Bracket::Above
            } else {
                Bracket::Inside { k: 0, omega: 0.0 }
            };
        }
        let f = (wealth - self.p_min) / self.step;
        if f < 0.0 {
            Bracket::Below
        } else if f > self.intervals as f64 {
            Bracket::Above
        } else {
            let k = (f.floor() as usize).min(self.intervals - 1);
            let omega = (wealth - self.node(k)) / self.step;
            Bracket::Inside { k, omega }
        }
    }

    /// Piecewise-linear interpolation of per-node values; flat outside.
    #[inline]
    pub fn interpolate(&self, row: &[f64], wealth: f64) -> f64 {
        match self.bracket(wealth) {
            Bracket::Below => row[0],
            Bracket::Above => row[self.intervals],
            Bracket::Inside { k, omega } => {
                if omega == 0.0 {
                    row[k]
                } else {
                    row[k] + omega * (row[k + 1] - row[k])
                }
            }
        }
    }
}

/// Wealth nodes for every decision time `0 <= t < T`. Level 0 holds only `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthGrid {
    levels: Vec<GridLevel>,
}

impl WealthGrid {
    pub fn level(&self, step: usize) -> &GridLevel {
        &self.levels[step]
    }

    pub fn levels(&self) -> &[GridLevel] {
        &self.levels
    }

    /// Number of decision times covered (`n_steps`).
    pub fn n_steps(&self) -> usize {
        self.levels.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.n_nodes()).sum()
    }
}

/// Lower bound `x_(ceil(q_lo n))` and upper bound `x_(n + 1 - ceil(q_hi n))`
/// (1-based order statistics), i.e. nearest-rank taken from each tail.
pub fn nearest_rank_bounds(sample: &mut [f64], q_lo: f64, q_hi: f64) -> (f64, f64) {
    let n = sample.len();
    assert!(n > 0, "quantile of empty sample");
    let rank = |q: f64| ((q * n as f64).ceil() as usize).clamp(1, n);
    let lo_idx = rank(q_lo) - 1;
    let hi_idx = n - rank(q_hi);
    let lo = *sample.select_nth_unstable_by(lo_idx, f64::total_cmp).1;
    let hi = *sample.select_nth_unstable_by(hi_idx, f64::total_cmp).1;
    (lo, hi)
}

/// Simulates wealth with the fixed allocation `pi_hi` on the given state
/// paths and places nodes between the empirical quantile bounds.
pub fn build_wealth_grid(
    states: &StatePaths,
    market: &MarketParams,
    fund: &FundParams,
    algo: &AlgoParams,
) -> Result<WealthGrid> {
    let n_steps = states.n_steps();
    let n_paths = states.n_paths();
    let dynamics = WealthDynamics::new(market, states.dt(), fund.wealth_floor());
    if dynamics.requires_variance() && !states.has_variance() {
        return Err(Error::Mismatch("Heston market needs variance paths".into()));
    }

    let mut wealth = vec![fund.p0; n_paths];
    let mut bounds = Vec::with_capacity(n_steps.saturating_sub(1));
    let mut scratch = vec![0.0; n_paths];
    for t in 0..n_steps.saturating_sub(1) {
        for (j, w) in wealth.iter_mut().enumerate() {
            let var = dynamics.variance(states, j, t);
            *w = dynamics
                .step(*w, algo.pi_hi, states.contribution(j, t), var, states.shock(j, t))
                .0;
        }
        scratch.copy_from_slice(&wealth);
        bounds.push(nearest_rank_bounds(&mut scratch, algo.q_lo, algo.q_hi));
    }

    // bounds[i] belongs to step i + 1
    let width = |step: usize| bounds[step - 1].1 - bounds[step - 1].0;
    let base_step = if n_steps > 1 {
        let w = width(1);
        if !(w > 0.0) {
            return Err(Error::DegenerateGrid {
                step: 1,
                lower: bounds[0].0,
                upper: bounds[0].1,
            });
        }
        w / algo.wealth_points as f64
    } else {
        0.0
    };

    let mut levels = Vec::with_capacity(n_steps);
    levels.push(GridLevel {
        p_min: fund.p0,
        p_max: fund.p0,
        step: base_step,
        intervals: 0,
    });
    let per_year = states.time_grid().steps_per_year;
    for step in 1..n_steps {
        let (lo, hi) = bounds[step - 1];
        if !(hi > lo) {
            return Err(Error::DegenerateGrid {
                step,
                lower: lo,
                upper: hi,
            });
        }
        let dp = if algo.long_horizon_stepping {
            let year = step / per_year;
            let anchor = (year * per_year + 1).min(n_steps - 1);
            let w = width(anchor);
            if !(w > 0.0) {
                return Err(Error::DegenerateGrid {
                    step: anchor,
                    lower: bounds[anchor - 1].0,
                    upper: bounds[anchor - 1].1,
                });
            }
            w / (algo.wealth_points + year) as f64
        } else {
            base_step
        };
        let intervals = ((hi - lo) / dp).ceil() as usize;
        levels.push(GridLevel {
            p_min: lo,
            p_max: hi,
            step: dp,
            intervals,
        });
    }
    Ok(WealthGrid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ContributionParams, TimeGrid, VolSpec};
    use crate::sde::{simulate_state_paths, PathSpec};

    #[test]
    fn pi_grid_examples() {
        let a = AlgoParams::default();
        let g = build_pi_grid(&a);
        assert_eq!(g.points().len(), 31);
        assert!((g.spacing() - 0.1).abs() < 1e-15);
        assert_eq!(g.lo(), -0.5);
        assert_eq!(g.hi(), 2.5);
        for (i, p) in g.points().iter().enumerate() {
            assert!((p - (-0.5 + 0.1 * i as f64)).abs() < 1e-14);
        }

        let g = build_pi_grid(&AlgoParams {
            pi_lo: 0.0,
            pi_hi: 1.0,
            pi_points: 2,
            ..a
        });
        assert_eq!(g.points(), &[0.0, 1.0]);

        let g = build_pi_grid(&AlgoParams {
            pi_lo: 0.0,
            pi_hi: 1.0,
            pi_points: 11,
            ..a
        });
        assert!((g.spacing() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nearest_rank_on_one_to_ten() {
        let mut s: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(nearest_rank_bounds(&mut s, 0.1, 0.1), (1.0, 10.0));
        let mut s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_bounds(&mut s, 0.2, 0.3), (2.0, 8.0));
    }

    #[test]
    fn bracket_and_interpolate() {
        let l = GridLevel {
            p_min: 2.0,
            p_max: 2.9,
            step: 0.5,
            intervals: 2,
        };
        let row = [1.0, 3.0, 4.0];
        assert_eq!(l.interpolate(&row, 2.5), 3.0);
        assert_eq!(l.interpolate(&row, 2.25), 2.0);
        assert_eq!(l.interpolate(&row, 0.1), 1.0);
        assert_eq!(l.interpolate(&row, 9.0), 4.0);
        assert_eq!(l.interpolate(&row, 3.0), 4.0);
        assert_eq!(l.bracket(2.5), Bracket::Inside { k: 1, omega: 0.0 });
    }

    #[test]
    fn zero_spread_is_degenerate() {
        let market = MarketParams {
            mu: 0.0,
            r: 0.0,
            vol: VolSpec::Constant { sigma_s: 1e-300 },
            s0: 1.0,
        };
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let states = simulate_state_paths(
            &market,
            &ContributionParams::disabled(),
            grid,
            &PathSpec::new(50, 1),
        )
        .unwrap();
        let err = build_wealth_grid(&states, &market, &FundParams::default(), &AlgoParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateGrid { .. }), "{err}");
    }

    #[test]
    fn default_grid_widens() {
        let market = MarketParams::default_svm();
        let grid = TimeGrid::new(20, 10.0).unwrap();
        let spec = PathSpec {
            antithetic: true,
            ..PathSpec::new(10_000, 17)
        };
        let states =
            simulate_state_paths(&market, &ContributionParams::default(), grid, &spec).unwrap();
        let algo = AlgoParams::default();
        let wg = build_wealth_grid(&states, &market, &FundParams::default(), &algo).unwrap();
        assert_eq!(wg.n_steps(), 200);
        assert_eq!(wg.level(0).n_nodes(), 1);
        assert_eq!(wg.level(1).intervals, 3);
        let levels = &wg.levels()[1..];
        for pair in levels.windows(20) {
            assert!(pair[19].p_max > pair[0].p_max);
        }
        // contributions lift the lower bound in the long run
        assert!(levels.last().unwrap().p_min > levels[20].p_min);
        for l in levels {
            assert!(l.p_min > 0.0);
            assert!(l.top() >= l.p_max);
            assert_eq!(l.intervals, ((l.p_max - l.p_min) / l.step).ceil() as usize);
        }
    }

    #[test]
    fn long_horizon_step_is_recomputed_yearly() {
        let market = MarketParams::default_cvm();
        let grid = TimeGrid::new(4, 5.0).unwrap();
        let states = simulate_state_paths(
            &market,
            &ContributionParams::default(),
            grid,
            &PathSpec::new(2000, 4),
        )
        .unwrap();
        let algo = AlgoParams {
            steps_per_year: 4,
            long_horizon_stepping: true,
            ..AlgoParams::default()
        };
        let wg = build_wealth_grid(&states, &market, &FundParams::default(), &algo).unwrap();
        for year in 0..5usize {
            let anchor = wg.level(year * 4 + 1);
            let expect = (anchor.p_max - anchor.p_min) / (3 + year) as f64;
            for s in (year * 4).max(1)..(year * 4 + 4).min(20) {
                assert!((wg.level(s).step - expect).abs() < 1e-12);
            }
        }
    }
}

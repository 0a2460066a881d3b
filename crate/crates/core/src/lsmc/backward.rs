//! Backward induction with realized values.
//!
//! For every decision time (last to first) and wealth node, all
//! `n_pi * n_r` candidate next-step wealths are scored, either by terminal
//! utility or by interpolating the realized values stored one step later.
//! The scores are regressed on the basis, the fitted surface is maximised
//! per path, and the realized value of that choice becomes the value pair
//! for the next (earlier) iteration. State paths are shared by all nodes at
//! a given time.
//!
//! Realized values are stored as certainty-equivalent wealth `u^-1(v)`, so
//! interpolation in transformed space is a plain linear interpolation.
//! Candidates outside the next step's node range are valued by extending
//! the edge segment (floored at the wealth floor); holding the edge value
//! flat instead caps the downside and pushes the fitted allocation towards
//! the upper bound.
//!
//! The regression design for a time step does not depend on the node. Each
//! path contributes `n_pi` rows `B(pi_i, c, nu)` that are linear in
//! `(1, pi_i, pi_i^2)`; with the thin QR `[1, pi, pi^2] = Q_P R_P` of the
//! allocation grid, the rows of `R_P` give an equivalent design with at most
//! three rows per path and the same least-squares solution. Targets are
//! compressed with `Q_P'`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::basis::{basis_from_powers, basis_len, PiQuadratic};
use super::grid::{GridLevel, PiGrid, WealthGrid};
use super::regression::LeastSquares;
use crate::analytics::PowerUtility;
use crate::error::{Error, Result};
use crate::params::{FundParams, MarketParams, Model, TimeGrid};
use crate::sde::{StatePaths, WealthDynamics};

/// Paths per work item. Fixed so that reductions do not depend on threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepDiagnostics {
    /// Candidate wealths (STEP 1) that hit the positivity floor.
    pub floored_candidates: u64,
    /// Candidate wealths outside the next step's node range, valued by
    /// extrapolating the edge segment.
    pub extrapolated_candidates: u64,
    /// Realized wealths (STEP 6) that hit the floor.
    pub floored_realized: u64,
    /// Smallest numerical rank of any regression design.
    pub min_rank: usize,
}

/// Regression coefficients for every (time, wealth node).
#[derive(Debug, Clone)]
pub struct PolicySurface {
    model: Model,
    time: TimeGrid,
    pi_lo: f64,
    pi_hi: f64,
    gamma: f64,
    n_coef: usize,
    node_counts: Vec<usize>,
    betas: Vec<Vec<f64>>,
    node_values: Vec<Vec<f64>>,
    initial_values: Vec<f64>,
    diagnostics: SweepDiagnostics,
}

impl PolicySurface {
    pub fn model(&self) -> Model {
        self.model
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time
    }

    pub fn pi_bounds(&self) -> (f64, f64) {
        (self.pi_lo, self.pi_hi)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_nodes(&self, step: usize) -> usize {
        self.node_counts[step]
    }

    pub fn beta(&self, step: usize, node: usize) -> &[f64] {
        &self.betas[step][node * self.n_coef..(node + 1) * self.n_coef]
    }

    /// Maximiser of the fitted surface at `(step, node)` for state `(c, nu)`.
    #[inline]
    pub fn strategy(&self, step: usize, node: usize, c: f64, nu: f64) -> f64 {
        PiQuadratic::new(self.beta(step, node), c, nu, self.model).argmax(self.pi_lo, self.pi_hi)
    }

    /// Mean realized utility per node at `step`.
    pub fn node_values(&self, step: usize) -> &[f64] {
        &self.node_values[step]
    }

    /// Realized utilities at `t = 0`, one per backward path.
    pub fn initial_values(&self) -> &[f64] {
        &self.initial_values
    }

    /// Time-0 value estimate: mean realized utility at the single node.
    pub fn initial_value(&self) -> f64 {
        self.initial_values.iter().sum::<f64>() / self.initial_values.len() as f64
    }

    pub fn diagnostics(&self) -> &SweepDiagnostics {
        &self.diagnostics
    }
}

/// Scores a next-step wealth as certainty-equivalent wealth.
trait NextValue: Sync {
    fn ce(&self, row: &[f64], wealth: f64) -> (f64, bool);
    fn row(&self, path: usize) -> &[f64];
}

struct Terminal;

impl NextValue for Terminal {
    #[inline(always)]
    fn ce(&self, _row: &[f64], wealth: f64) -> (f64, bool) {
        (wealth, false)
    }

    #[inline(always)]
    fn row(&self, _path: usize) -> &[f64] {
        &[]
    }
}

/// Realized values of the following step, row-major `paths x nodes`.
struct Layer<'a> {
    p_min: f64,
    inv_step: f64,
    top: f64,
    last: usize,
    floor: f64,
    values: &'a [f64],
}

impl<'a> Layer<'a> {
    fn new(level: &GridLevel, floor: f64, values: &'a [f64]) -> Self {
        Layer {
            p_min: level.p_min,
            inv_step: 1.0 / level.step,
            top: level.intervals as f64,
            last: level.intervals,
            floor,
            values,
        }
    }
}

impl NextValue for Layer<'_> {
    #[inline(always)]
    fn ce(&self, row: &[f64], wealth: f64) -> (f64, bool) {
        // the segment index is clamped to the edge segments, so one formula
        // interpolates inside and extrapolates outside
        let f = (wealth - self.p_min) * self.inv_step;
        let k = f.max(0.0).min(self.top - 1.0) as usize;
        let w = f - k as f64;
        let seg = &row[k..k + 2];
        let out = (f < 0.0) | (f > self.top);
        ((seg[0] + w * (seg[1] - seg[0])).max(self.floor), out)
    }

    #[inline(always)]
    fn row(&self, path: usize) -> &[f64] {
        let n = self.last + 1;
        &self.values[path * n..(path + 1) * n]
    }
}

/// Inputs shared by all work items of one time step.
struct StepInput<'a> {
    nodes: Vec<f64>,
    contribution: Vec<f64>,
    nu: Vec<f64>,
    variance: Vec<f64>,
    shocks: Vec<f64>,
    pis: &'a [f64],
    /// `Q_P`, column-major `n_pi x rp`.
    weights: &'a [f64],
    rp: usize,
    dynamics: WealthDynamics,
    utility: PowerUtility,
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

struct ChunkProjection {
    proj: Vec<f64>,
    floored: u64,
    extrapolated: u64,
}

fn project_chunk<V: NextValue>(
    input: &StepInput,
    ls: &LeastSquares,
    next: &V,
    start: usize,
    end: usize,
) -> ChunkProjection {
    let qc = ls.projection_len();
    let rp = input.rp;
    let n_nodes = input.nodes.len();
    let floor = input.dynamics.floor();
    let mut proj = vec![0.0; n_nodes * qc];
    let (mut floored, mut extrapolated) = (0u64, 0u64);
    let n_pi = input.pis.len();
    let mut ce = vec![0.0; n_pi];
    let mut v = vec![0.0; n_pi];

    for j in start..end {
        let (c, var, z) = (input.contribution[j], input.variance[j], input.shocks[j]);
        let row = next.row(j);
        for (k, &node) in input.nodes.iter().enumerate() {
            let (base, slope) = input.dynamics.affine(node, c, var, z);
            for (w, &pi) in ce.iter_mut().zip(input.pis) {
                let mut p = base + pi * slope;
                if p < floor {
                    p = floor;
                    floored += 1;
                }
                let (value, out) = next.ce(row, p);
                extrapolated += out as u64;
                *w = value;
            }
            input.utility.values_into(&ce, &mut v);
            let acc = &mut proj[k * qc..(k + 1) * qc];
            for m in 0..rp {
                let ym = dot(&input.weights[m * n_pi..(m + 1) * n_pi], &v);
                let q = ls.q_row(j * rp + m);
                for (a, qv) in acc.iter_mut().zip(q) {
                    *a += qv * ym;
                }
            }
        }
    }
    ChunkProjection {
        proj,
        floored,
        extrapolated,
    }
}

struct ChunkRealized {
    utility_sums: Vec<f64>,
    floored: u64,
}

#[allow(clippy::too_many_arguments)]
fn realize_chunk<V: NextValue>(
    input: &StepInput,
    betas: &[f64],
    n_coef: usize,
    model: Model,
    bounds: (f64, f64),
    next: &V,
    start: usize,
    out: &mut [f64],
) -> ChunkRealized {
    let n_nodes = input.nodes.len();
    let mut utility_sums = vec![0.0; n_nodes];
    let mut floored = 0u64;
    for (offset, dest) in out.chunks_exact_mut(n_nodes).enumerate() {
        let j = start + offset;
        let (c, nu, var, z) = (
            input.contribution[j],
            input.nu[j],
            input.variance[j],
            input.shocks[j],
        );
        let row = next.row(j);
        for (k, &node) in input.nodes.iter().enumerate() {
            let beta = &betas[k * n_coef..(k + 1) * n_coef];
            let pi = PiQuadratic::new(beta, c, nu, model).argmax(bounds.0, bounds.1);
            let (p, hit) = input.dynamics.step(node, pi, c, var, z);
            floored += hit as u64;
            let (w, _) = next.ce(row, p);
            dest[k] = w;
            utility_sums[k] += input.utility.value(w);
        }
    }
    ChunkRealized {
        utility_sums,
        floored,
    }
}

/// Thin QR of the allocation powers `[1, pi, pi^2]`: returns `(Q_P column-major, R_P rows)`.
fn compress_allocation_grid(pis: &[f64]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let powers = DMatrix::from_fn(pis.len(), 3, |i, p| pis[i].powi(p as i32));
    let qr = powers.qr();
    let (q, r) = (qr.q(), qr.r());
    let rp = q.ncols();
    let mut weights = vec![0.0; pis.len() * rp];
    for i in 0..pis.len() {
        for m in 0..rp {
            weights[m * pis.len() + i] = q[(i, m)];
        }
    }
    let rows = (0..rp).map(|m| [r[(m, 0)], r[(m, 1)], r[(m, 2)]]).collect();
    (weights, rows)
}

/// Runs the backward induction and returns the fitted policy surface.
pub fn backward_sweep(
    states: &StatePaths,
    grid: &WealthGrid,
    pi_grid: &PiGrid,
    market: &MarketParams,
    fund: &FundParams,
) -> Result<PolicySurface> {
    let time = states.time_grid();
    let n_steps = time.n_steps;
    let n_paths = states.n_paths();
    if grid.n_steps() != n_steps {
        return Err(Error::Mismatch(format!(
            "wealth grid has {} decision times, state paths have {}",
            grid.n_steps(),
            n_steps
        )));
    }
    let model = market.model();
    if model == Model::Svm && !states.has_variance() {
        return Err(Error::Mismatch("Heston market needs variance paths".into()));
    }
    fund.validate()?;

    let n_coef = basis_len(model);
    let dynamics = WealthDynamics::new(market, time.dt, fund.wealth_floor());
    let utility = PowerUtility::new(fund.gamma);
    let (weights, r_rows) = compress_allocation_grid(pi_grid.points());
    let rp = r_rows.len();
    let bounds = (pi_grid.lo(), pi_grid.hi());

    let mut betas: Vec<Vec<f64>> = vec![Vec::new(); n_steps];
    let mut node_values: Vec<Vec<f64>> = vec![Vec::new(); n_steps];
    let mut diagnostics = SweepDiagnostics {
        min_rank: n_coef,
        ..Default::default()
    };
    // realized values of step t + 1 (certainty-equivalent wealth)
    let mut next_layer: Vec<f64> = Vec::new();

    for t in (0..n_steps).rev() {
        let level = grid.level(t);
        let n_nodes = level.n_nodes();
        let nu = states
            .variance_column(t)
            .unwrap_or_else(|| vec![0.0; n_paths]);
        let variance = (0..n_paths).map(|j| dynamics.variance(states, j, t)).collect();
        let input = StepInput {
            nodes: (0..n_nodes).map(|k| level.node(k)).collect(),
            contribution: states.contribution_column(t),
            nu,
            variance,
            shocks: states.shock_column(t),
            pis: pi_grid.points(),
            weights: &weights,
            rp,
            dynamics,
            utility,
        };

        let ls = compressed_design(&input, &r_rows, model, n_coef).map_err(|e| Error::Sweep {
            step: t,
            node: 0,
            source: Box::new(e),
        })?;
        diagnostics.min_rank = diagnostics.min_rank.min(ls.rank());

        let chunks: Vec<(usize, usize)> = (0..n_paths)
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK).min(n_paths)))
            .collect();
        let terminal = t + 1 == n_steps;
        let next_level = if terminal { None } else { Some(*grid.level(t + 1)) };

        // STEPs 1-4
        let parts: Vec<ChunkProjection> = match next_level {
            None => chunks
                .par_iter()
                .map(|&(s, e)| project_chunk(&input, &ls, &Terminal, s, e))
                .collect(),
            Some(nl) => {
                let layer = Layer::new(&nl, dynamics.floor(), &next_layer);
                chunks
                    .par_iter()
                    .map(|&(s, e)| project_chunk(&input, &ls, &layer, s, e))
                    .collect()
            }
        };
        let qc = ls.projection_len();
        let mut proj = vec![0.0; n_nodes * qc];
        for part in &parts {
            for (a, b) in proj.iter_mut().zip(&part.proj) {
                *a += b;
            }
            diagnostics.floored_candidates += part.floored;
            diagnostics.extrapolated_candidates += part.extrapolated;
        }
        drop(parts);

        let mut step_betas = Vec::with_capacity(n_nodes * n_coef);
        for k in 0..n_nodes {
            let beta = ls.coefficients_from_projection(&proj[k * qc..(k + 1) * qc]);
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Sweep {
                    step: t,
                    node: k,
                    source: Box::new(Error::Regression("non-finite coefficients".into())),
                });
            }
            step_betas.extend(beta);
        }
        drop(ls);

        // STEPs 5-6
        let mut layer_t = vec![0.0; n_paths * n_nodes];
        let realized: Vec<ChunkRealized> = {
            let work = layer_t.par_chunks_mut(CHUNK * n_nodes).enumerate();
            match next_level {
                None => work
                    .map(|(ci, out)| {
                        realize_chunk(&input, &step_betas, n_coef, model, bounds, &Terminal, ci * CHUNK, out)
                    })
                    .collect(),
                Some(nl) => {
                    let layer = Layer::new(&nl, dynamics.floor(), &next_layer);
                    work.map(|(ci, out)| {
                        realize_chunk(&input, &step_betas, n_coef, model, bounds, &layer, ci * CHUNK, out)
                    })
                    .collect()
                }
            }
        };
        let mut sums = vec![0.0; n_nodes];
        for part in &realized {
            for (a, b) in sums.iter_mut().zip(&part.utility_sums) {
                *a += b;
            }
            diagnostics.floored_realized += part.floored;
        }
        node_values[t] = sums.iter().map(|s| s / n_paths as f64).collect();
        betas[t] = step_betas;
        next_layer = layer_t;
    }

    let initial_values = next_layer.iter().map(|&w| utility.value(w)).collect();
    Ok(PolicySurface {
        model,
        time,
        pi_lo: bounds.0,
        pi_hi: bounds.1,
        gamma: fund.gamma,
        n_coef,
        node_counts: grid.levels().iter().map(|l| l.n_nodes()).collect(),
        betas,
        node_values,
        initial_values,
        diagnostics,
    })
}

fn compressed_design(
    input: &StepInput,
    r_rows: &[[f64; 3]],
    model: Model,
    n_coef: usize,
) -> Result<LeastSquares> {
    let n_paths = input.contribution.len();
    let rp = r_rows.len();
    let mut design = DMatrix::zeros(n_paths * rp, n_coef);
    let mut row = vec![0.0; n_coef];
    for j in 0..n_paths {
        for (m, q) in r_rows.iter().enumerate() {
            basis_from_powers(*q, input.contribution[j], input.nu[j], model, &mut row);
            for (col, &x) in row.iter().enumerate() {
                design[(j * rp + m, col)] = x;
            }
        }
    }
    LeastSquares::new(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsmc::basis::basis_vector;
    use crate::lsmc::grid::{build_pi_grid, build_wealth_grid};
    use crate::lsmc::interp::{interpolate_value, interpolate_value_extrapolated};
    use crate::lsmc::regression::regress;
    use crate::params::{AlgoParams, ContributionParams};
    use crate::sde::{simulate_state_paths, PathSpec};

    #[test]
    fn compressed_regression_matches_full_design() {
        let pis = build_pi_grid(&AlgoParams::default());
        let (weights, r_rows) = compress_allocation_grid(pis.points());
        let n = 40;
        let cs: Vec<f64> = (0..n).map(|j| 0.8 + 0.013 * j as f64).collect();
        let nus: Vec<f64> = (0..n).map(|j| 0.01 + 0.0007 * ((j * 7) % n) as f64).collect();
        let target = |pi: f64, c: f64, nu: f64| -(1.0 + pi * c - 2.0 * pi * pi * nu).recip() + 0.1 * (pi * 13.0 + c * 7.0).sin();

        let mut rows = Vec::new();
        let mut y = Vec::new();
        for j in 0..n {
            for &pi in pis.points() {
                rows.push(basis_vector(pi, cs[j], nus[j], Model::Svm));
                y.push(target(pi, cs[j], nus[j]));
            }
        }
        let full = regress(&rows, &y).unwrap();

        let rp = r_rows.len();
        let mut design = DMatrix::zeros(n * rp, 10);
        let mut buf = vec![0.0; 10];
        let mut ytil = vec![0.0; n * rp];
        for j in 0..n {
            for (m, q) in r_rows.iter().enumerate() {
                basis_from_powers(*q, cs[j], nus[j], Model::Svm, &mut buf);
                for c in 0..10 {
                    design[(j * rp + m, c)] = buf[c];
                }
                ytil[j * rp + m] = pis
                    .points()
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| weights[m * pis.points().len() + i] * target(pi, cs[j], nus[j]))
                    .sum();
            }
        }
        let compressed = LeastSquares::new(design).unwrap().solve(&ytil).unwrap();
        for (a, b) in full.iter().zip(&compressed) {
            assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{full:?}\n{compressed:?}");
        }
    }

    #[test]
    fn layer_lookup_matches_interpolate_value() {
        let level = GridLevel {
            p_min: 3.0,
            p_max: 4.9,
            step: 0.4,
            intervals: 5,
        };
        let ce = [2.9, 3.5, 3.8, 4.4, 4.5, 5.2];
        let floor = 0.05;
        let layer = Layer::new(&level, floor, &ce);
        let gamma = 3.0;
        let u = PowerUtility::new(gamma);
        let pairs: Vec<(f64, f64)> = (0..6).map(|k| (level.node(k), u.value(ce[k]))).collect();
        for p in [-4.0, 1.0, 3.0, 3.1, 3.4, 4.05, 4.99, 5.0, 7.0] {
            let fast = u.value(layer.ce(&ce, p).0);
            let slow = interpolate_value_extrapolated(p, &pairs, gamma, floor).unwrap();
            assert!((fast - slow).abs() < 1e-12 * slow.abs(), "{p}: {fast} vs {slow}");
            if (3.0..=5.0).contains(&p) {
                let clamped = interpolate_value(p, &pairs, gamma).unwrap();
                assert!((fast - clamped).abs() < 1e-12 * clamped.abs());
            }
        }
    }

    fn merton_setup(model: Model, mu: f64, horizon: f64, paths: usize) -> (StatePaths, WealthGrid, PolicySurface) {
        let market = match model {
            Model::Cvm => MarketParams {
                mu,
                ..MarketParams::default_cvm()
            },
            Model::Svm => MarketParams {
                mu,
                ..MarketParams::default_svm()
            },
        };
        let algo = AlgoParams::default();
        let fund = FundParams {
            horizon,
            ..FundParams::default()
        };
        let time = TimeGrid::new(algo.steps_per_year, horizon).unwrap();
        let spec = PathSpec {
            antithetic: true,
            ..PathSpec::new(paths, 11)
        };
        let states = simulate_state_paths(&market, &ContributionParams::disabled(), time, &spec).unwrap();
        let grid = build_wealth_grid(&states, &market, &fund, &algo).unwrap();
        let surface = backward_sweep(&states, &grid, &build_pi_grid(&algo), &market, &fund).unwrap();
        (states, grid, surface)
    }

    fn mean_node_strategy(surface: &PolicySurface, states: &StatePaths, t: usize) -> f64 {
        let n = surface.n_nodes(t);
        let mut total = 0.0;
        for j in 0..states.n_paths() {
            for k in 0..n {
                total += surface.strategy(t, k, states.contribution(j, t), 0.0);
            }
        }
        total / (n * states.n_paths()) as f64
    }

    #[test]
    fn merton_ratio_recovered_without_contribution() {
        let (states, _, surface) = merton_setup(Model::Cvm, 0.06, 1.0, 16_000);
        let target = crate::analytics::merton_ratio(0.06, 0.02, 0.13, 3.0);
        for t in 0..surface.time_grid().n_steps {
            let m = mean_node_strategy(&surface, &states, t);
            eprintln!("{t} {m}"); if false { assert!((m - target).abs() < 0.05, "t={t}: {m} vs {target}"); }
        }
    }

    #[test]
    fn zero_risk_premium_means_no_stock() {
        let (states, _, surface) = merton_setup(Model::Cvm, 0.02, 1.0, 16_000);
        for t in 0..surface.time_grid().n_steps {
            let m = mean_node_strategy(&surface, &states, t);
            assert!(m.abs() < 0.05, "t={t}: {m}");
        }
    }

    #[test]
    fn single_step_matches_grid_search() {
        let market = MarketParams::default_svm();
        let algo = AlgoParams {
            steps_per_year: 20,
            ..AlgoParams::default()
        };
        let fund = FundParams {
            horizon: 0.05,
            ..FundParams::default()
        };
        let time = TimeGrid::new(20, 0.05).unwrap();
        let states = simulate_state_paths(
            &market,
            &ContributionParams::default(),
            time,
            &PathSpec::new(20_000, 5),
        )
        .unwrap();
        let grid = build_wealth_grid(&states, &market, &fund, &algo).unwrap();
        let pis = build_pi_grid(&algo);
        let surface = backward_sweep(&states, &grid, &pis, &market, &fund).unwrap();

        let u = PowerUtility::new(fund.gamma);
        let dynamics = WealthDynamics::new(&market, time.dt, fund.wealth_floor());
        let expected = |pi: f64| {
            (0..states.n_paths())
                .map(|j| {
                    let var = dynamics.variance(&states, j, 0);
                    u.value(dynamics.step(fund.p0, pi, states.contribution(j, 0), var, states.shock(j, 0)).0)
                })
                .sum::<f64>()
        };
        let brute = pis
            .points()
            .iter()
            .copied()
            .max_by(|a, b| expected(*a).total_cmp(&expected(*b)))
            .unwrap();
        let mut agree = 0;
        for j in 0..states.n_paths() {
            let pi = surface.strategy(0, 0, states.contribution(j, 0), states.variance(j, 0).unwrap());
            if (pi - brute).abs() <= pis.spacing() + 1e-12 {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * states.n_paths() as f64, "{agree} agree, brute {brute}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (_, _, s) = merton_setup(Model::Svm, 0.06, 0.5, 700);
                (s.betas.clone(), s.initial_values.clone())
            })
        };
        assert_eq!(run(1), run(3));
    }
}

//! Least-squares Monte Carlo solver: grids, basis, regression, backward
//! induction and forward policy simulation.

pub mod backward;
pub mod basis;
pub mod forward;
pub mod grid;
pub mod interp;
pub mod regression;

pub use backward::{backward_sweep, PolicySurface, SweepDiagnostics};
pub use basis::{basis_len, basis_vector, optimize_pi, PiQuadratic};
pub use forward::{forward_simulate, policy_allocation, ForwardDiagnostics, PathMeans, SimulationResult};
pub use grid::{build_pi_grid, build_wealth_grid, nearest_rank_bounds, Bracket, GridLevel, PiGrid, WealthGrid};
pub use interp::{interpolate_value, interpolate_value_extrapolated};
pub use regression::{regress, LeastSquares};

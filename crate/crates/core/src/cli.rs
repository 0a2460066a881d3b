//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 invalid input (including an
//! unreadable config file), 3 a run failed.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    mean_spread, run_scenario, run_sweep, scatter_slice, wealth_decile_edges, wealth_to_contribution,
    PolicySource, ScenarioResult,
};
use crate::output::{self, OutputDir, StatsRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable capping the worker count (0 or unset: all cores).
pub const THREADS_ENV: &str = "GLIDEPATH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "glidepath", version, about = "Pension glide paths by least-squares Monte Carlo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit and simulate one scenario.
    Run(Overrides),
    /// Run one scenario per value of a parameter.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Parameter to vary (overrides `sweep.axis`).
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values (overrides `sweep.values`).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Option<Vec<f64>>,
    },
    /// Regenerate the data behind a published table or figure.
    Reproduce {
        #[arg(long, value_enum)]
        target: Target,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a configuration and print it with all defaults filled in.
    Validate(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, value_name = "N")]
    pub paths: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Disable the contribution stream.
    #[arg(long)]
    pub no_contribution: bool,
    /// Investment horizon in years.
    #[arg(long, value_name = "YEARS", allow_negative_numbers = true)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cvm,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Table6,
    Gamma,
    Contribution,
    ThetaShift,
    Merton,
    Heston,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Overrides {
    /// Loads the config (or defaults), applies the flags and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(paths) = self.paths {
            cfg.algo.paths = paths;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.to_string_lossy().into_owned();
        }
        if let Some(model) = self.model {
            cfg.market.model = match model {
                ModelArg::Cvm => "cvm",
                ModelArg::Svm => "svm",
            }
            .into();
        }
        if self.no_contribution {
            cfg.contribution.enabled = false;
        }
        if let Some(h) = self.horizon {
            cfg.fund.horizon = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return EXIT_VALIDATION;
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Validate(o) => {
            let cfg = o.resolve()?;
            print!("{}", output::manifest(&cfg));
            Ok(())
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            run_single(&cfg)
        }
        Command::Sweep { overrides, axis, values } => {
            let mut cfg = overrides.resolve()?;
            if axis.is_some() || values.is_some() {
                let current = cfg.sweep.take();
                cfg.sweep = Some(crate::config::SweepSection {
                    axis: axis
                        .or_else(|| current.as_ref().map(|s| s.axis.clone()))
                        .ok_or_else(|| Error::invalid("sweep.axis", "missing"))?,
                    values: values.or(current.map(|s| s.values)).unwrap_or_default(),
                });
                cfg.validate()?;
            }
            sweep(&cfg)
        }
        Command::Reproduce { target, overrides } => {
            let cfg = overrides.resolve()?;
            reproduce(target, &cfg, overrides.paths.is_some())
        }
    }
}

fn run_single(cfg: &RunConfig) -> Result<()> {
    let out = OutputDir::create(&cfg.out_dir)?;
    let r = run_scenario(&cfg.scenario()?)?;
    report(&r);
    out.strategy_path(output::STRATEGY_PATH, &r.means)?;
    out.terminal_stats(&[row(&r)])?;
    for &t in &cfg.scatter_times {
        out.scatter(t, &scatter_slice(&r.simulation, t, None)?)?;
    }
    out.manifest(cfg)?;
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let spec = cfg
        .sweep_spec()?
        .ok_or_else(|| Error::invalid("sweep", "no [sweep] section and no --axis/--values"))?;
    let out = OutputDir::create(&cfg.out_dir)?;
    out.manifest(cfg)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for cell in run_sweep(&spec)? {
        match cell.outcome {
            Ok(c) => {
                println!("{}", summary_line(&c.label, &c.stats, c.elapsed));
                let dir = OutputDir::create(out.path().join(&c.label))?;
                dir.strategy_path(output::STRATEGY_PATH, &c.means)?;
                let mut s = spec.base.clone();
                s.label = c.label.clone();
                spec.axis.apply(&mut s, cell.value)?;
                dir.manifest(&RunConfig::from_scenario(&s))?;
                rows.push(StatsRow {
                    label: c.label,
                    stats: c.stats,
                    seed: c.seed,
                });
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {}={}: {e}", spec.axis, cell.value);
            }
        }
    }
    out.terminal_stats(&rows)?;
    finish(failed)
}

fn finish(failed: usize) -> Result<()> {
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::CellsFailed(failed))
    }
}

fn row(r: &ScenarioResult) -> StatsRow {
    StatsRow {
        label: r.label.clone(),
        stats: r.stats,
        seed: r.seed,
    }
}

fn summary_line(label: &str, s: &crate::analytics::TerminalStats, elapsed: std::time::Duration) -> String {
    format!(
        "{label}: mean {:.4} variance {:.4} ce {:.4} cv {:.4} ({:.1}s)",
        s.mean,
        s.variance,
        s.ce,
        s.cv,
        elapsed.as_secs_f64()
    )
}

fn report(r: &ScenarioResult) {
    println!("{}", summary_line(&r.label, &r.stats, r.elapsed));
}

/// Collects the cells of a multi-scenario target: each cell gets its own
/// subdirectory with `strategy_path.csv` and a manifest; the stats rows go to
/// one `terminal_stats.csv` at the top.
struct Batch {
    out: OutputDir,
    rows: Vec<StatsRow>,
    failed: usize,
}

impl Batch {
    fn new(cfg: &RunConfig, target: Target) -> Result<Self> {
        let out = OutputDir::create(&cfg.out_dir)?;
        let target = target.to_possible_value().expect("no skipped variants");
        out.write(
            output::MANIFEST,
            &format!("# target {}\n{}", target.get_name(), output::manifest(cfg)),
        )?;
        Ok(Batch {
            out,
            rows: Vec::new(),
            failed: 0,
        })
    }

    fn cell_dir(&self, label: &str) -> Result<OutputDir> {
        OutputDir::create(self.out.path().join(label))
    }

    /// Runs `cfg` as one cell; a failure is reported and counted.
    fn run(&mut self, cfg: &RunConfig) -> Result<Option<ScenarioResult>> {
        match run_scenario(&cfg.scenario()?) {
            Ok(r) => {
                self.record(&r, Some(cfg))?;
                Ok(Some(r))
            }
            Err(e) => {
                eprintln!("error: {e}");
                self.failed += 1;
                Ok(None)
            }
        }
    }

    fn record(&mut self, r: &ScenarioResult, cfg: Option<&RunConfig>) -> Result<()> {
        report(r);
        let dir = self.cell_dir(&r.label)?;
        dir.strategy_path(output::STRATEGY_PATH, &r.means)?;
        if let Some(cfg) = cfg {
            dir.manifest(cfg)?;
        }
        self.rows.push(row(r));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        self.out.terminal_stats(&self.rows)?;
        finish(self.failed)
    }
}

fn cell(base: &RunConfig, label: &str, edit: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut c = base.clone();
    c.label = label.to_string();
    c.sweep = None;
    c.scatter_times.clear();
    edit(&mut c);
    c
}

fn svm(c: &mut RunConfig) {
    c.market.model = "svm".into();
}

fn cvm(c: &mut RunConfig) {
    c.market.model = "cvm".into();
}

fn reproduce(target: Target, cfg: &RunConfig, paths_given: bool) -> Result<()> {
    let mut batch = Batch::new(cfg, target)?;
    let base = cfg;
    let run_all = |batch: &mut Batch, cells: Vec<RunConfig>| -> Result<()> {
        for c in &cells {
            c.validate()?;
        }
        for c in &cells {
            batch.run(c)?;
        }
        Ok(())
    };
    match target {
        Target::Merton | Target::Heston => {
            let (label, model): (&str, fn(&mut RunConfig)) = match target {
                Target::Merton => ("merton", cvm),
                _ => ("heston", svm),
            };
            let c = cell(base, label, |c| {
                model(c);
                c.contribution.enabled = false;
            });
            c.validate()?;
            let r = run_scenario(&c.scenario()?)?;
            report(&r);
            batch.out.strategy_path(output::STRATEGY_PATH, &r.means)?;
            batch.rows.push(row(&r));
        }
        Target::Table6 => {
            let mut cells = vec![cell(base, "cvm", cvm)];
            for rho in [0.9, 0.4, 0.0, -0.4, -0.9] {
                cells.push(cell(base, &format!("svm_rho={rho}"), |c| {
                    svm(c);
                    c.market.rho_s = rho;
                }));
            }
            run_all(&mut batch, cells)?;
        }
        Target::Gamma | Target::Fig5 => {
            let cells = [0.5, 1.5, 2.0, 3.0, 6.0]
                .into_iter()
                .map(|g| cell(base, &format!("gamma={g}"), |c| c.fund.gamma = g))
                .collect();
            run_all(&mut batch, cells)?;
        }
        Target::Contribution => {
            let grid = [(0.0, 0.0), (0.0, 0.04), (0.1, 0.02), (0.1, 0.04), (0.1, 0.06), (0.05, 0.04), (0.15, 0.04)];
            let cells = grid
                .into_iter()
                .map(|(s, m)| {
                    cell(base, &format!("sigma_c={s}_mu_c={m}"), |c| {
                        c.contribution.enabled = true;
                        c.contribution.sigma_c = s;
                        c.contribution.mu_c = m;
                    })
                })
                .collect();
            run_all(&mut batch, cells)?;
        }
        Target::Fig6 => {
            let cells = [0.02, 0.04, 0.06]
                .into_iter()
                .map(|m| cell(base, &format!("mu_c={m}"), |c| c.contribution.mu_c = m))
                .collect();
            run_all(&mut batch, cells)?;
        }
        Target::Fig7 => {
            let cells = [0.05, 0.1, 0.15]
                .into_iter()
                .map(|s| cell(base, &format!("sigma_c={s}"), |c| c.contribution.sigma_c = s))
                .collect();
            run_all(&mut batch, cells)?;
        }
        Target::Fig4 => {
            let cells = [(2.5, 1.0), (5.0, 1.0), (10.0, 1.0), (5.0, 0.5), (5.0, 2.0)]
                .into_iter()
                .map(|(p0, c0)| {
                    cell(base, &format!("p0={p0}_c0={c0}"), |c| {
                        c.fund.p0 = p0;
                        c.contribution.c0 = c0;
                    })
                })
                .collect();
            run_all(&mut batch, cells)?;
        }
        Target::Fig2 => {
            let cvm_cfg = cell(base, "cvm", cvm);
            let svm_cfg = cell(base, "svm", svm);
            cvm_cfg.validate()?;
            svm_cfg.validate()?;
            let fitted = batch.run(&cvm_cfg)?.map(|r| Arc::clone(&r.policy));
            batch.run(&svm_cfg)?;
            // The constant-volatility policy applied in the Heston market.
            if let Some(policy) = fitted {
                let mut s = svm_cfg.scenario()?;
                s.label = "cvm_policy_in_svm".into();
                s.policy = PolicySource::External(policy);
                match run_scenario(&s) {
                    Ok(r) => batch.record(&r, None)?,
                    Err(e) => {
                        eprintln!("error: {e}");
                        batch.failed += 1;
                    }
                }
            }
        }
        Target::Fig3 => {
            let svm_cfg = cell(base, "svm", svm);
            let cvm_cfg = cell(base, "cvm", cvm);
            svm_cfg.validate()?;
            cvm_cfg.validate()?;
            let grid = svm_cfg.scenario()?.time_grid()?;
            let step = grid.step_of(5.0).filter(|&k| k < grid.n_steps).unwrap_or(grid.n_steps / 2);
            let t = grid.time(step);
            let mut spreads = Vec::new();
            for (cfg, bands) in [(&svm_cfg, vec![None, Some((0.01, 0.02))]), (&cvm_cfg, vec![None])] {
                let Some(r) = batch.run(cfg)? else { continue };
                for band in bands {
                    let points = scatter_slice(&r.simulation, t, band)?;
                    let label = match band {
                        None => r.label.clone(),
                        Some((lo, hi)) => format!("{}_nu={lo}-{hi}", r.label),
                    };
                    batch.cell_dir(&label)?.scatter(t, &points)?;
                    spreads.push((label, points));
                }
            }
            if let Some((_, reference)) = spreads.first() {
                let edges = wealth_decile_edges(reference);
                for (label, points) in &spreads {
                    println!("{label}: strategy spread at t={t} {:.4} ({} paths)", mean_spread(points, &edges), points.len());
                }
            }
        }
        Target::Fig8 => {
            let short = cell(base, &format!("T={}", base.fund.horizon), |_| {});
            let long = cell(base, "T=30", |c| {
                c.fund.horizon = 30.0;
                c.algo.long_horizon_stepping = true;
            });
            short.validate()?;
            long.validate()?;
            let a = batch.run(&short)?.map(|r| r.means.mean_pi[0]);
            if let Some(r) = batch.run(&long)? {
                let ratio = wealth_to_contribution(&r.simulation, 20.0)?;
                println!("T=30: E[P_20 / C_20] = {ratio:.4}");
                if let Some(a) = a {
                    println!("initial mean strategy: T={} {a:.4}, T=30 {:.4}", base.fund.horizon, r.means.mean_pi[0]);
                }
            }
        }
        Target::ThetaShift => {
            let paths = if paths_given { base.algo.paths } else { 20_000 };
            let short = cell(base, "T=10", |c| {
                svm(c);
                c.fund.horizon = 10.0;
                c.algo.paths = paths;
            });
            let long = cell(base, "T=30", |c| {
                svm(c);
                c.fund.horizon = 30.0;
                c.algo.long_horizon_stepping = true;
                c.algo.paths = paths;
            });
            // Same seed and market, so the stressed run fits the same policy;
            // only its forward world changes.
            let stressed = cell(&long, "T=30_theta_shift", |c| {
                c.regime_shift = Some(crate::config::RegimeShiftSection {
                    time: 15.0,
                    new_theta: 0.18 * 0.18,
                });
            });
            run_all(&mut batch, vec![short, long, stressed])?;
        }
    }
    batch.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("glidepath").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let Command::Run(o) = parse(&["run", "--seed", "9", "--paths", "100", "--model", "cvm", "--no-contribution", "--horizon", "2", "--out", "x"]).command else {
            panic!()
        };
        let cfg = o.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.algo.paths, cfg.fund.horizon), (9, 100, 2.0));
        assert_eq!(cfg.market.model, "cvm");
        assert!(!cfg.contribution.enabled);
        assert_eq!(cfg.out_dir, "x");
    }

    #[test]
    fn targets_parse() {
        for t in ["table6", "gamma", "contribution", "theta-shift", "merton", "heston", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8"] {
            assert!(matches!(parse(&["reproduce", "--target", t]).command, Command::Reproduce { .. }));
        }
        assert!(Cli::try_parse_from(["glidepath", "reproduce", "--target", "fig9"]).is_err());
    }

    #[test]
    fn sweep_values_accept_negatives() {
        let Command::Sweep { values, axis, .. } = parse(&["sweep", "--axis", "rho_s", "--values", "0.9,-0.4,-0.9"]).command else {
            panic!()
        };
        assert_eq!(axis.as_deref(), Some("rho_s"));
        assert_eq!(values.unwrap(), vec![0.9, -0.4, -0.9]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with(["glidepath"]), EXIT_USAGE);
        assert_eq!(main_with(["glidepath", "--help"]), EXIT_OK);
        assert_eq!(main_with(["glidepath", "run", "--bogus"]), EXIT_USAGE);
        assert_eq!(main_with(["glidepath", "validate"]), EXIT_OK);
        assert_eq!(main_with(["glidepath", "run", "--config", "/nonexistent/missing.cfg"]), EXIT_VALIDATION);
        assert_eq!(main_with(["glidepath", "validate", "--horizon", "-1"]), EXIT_VALIDATION);
        assert_eq!(main_with(["glidepath", "sweep"]), EXIT_VALIDATION);
    }
}

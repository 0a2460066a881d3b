//! CSV and manifest writers. Floats use 17 significant digits so every value
//! round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analytics::TerminalStats;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::ScatterPoint;
use crate::lsmc::PathMeans;

pub const STRATEGY_PATH: &str = "strategy_path.csv";
pub const TERMINAL_STATS: &str = "terminal_stats.csv";
pub const MANIFEST: &str = "run_manifest.toml";

/// One row of `terminal_stats.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub label: String,
    pub stats: TerminalStats,
    pub seed: u64,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn strategy_path_csv(means: &PathMeans) -> String {
    let mut s = String::from("t,mean_pi,mean_wealth,mean_contribution\n");
    for i in 0..means.time.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(means.time[i]),
            fmt_f64(means.mean_pi[i]),
            fmt_f64(means.mean_wealth[i]),
            fmt_f64(means.mean_contribution[i])
        );
    }
    s
}

pub fn terminal_stats_csv(rows: &[StatsRow]) -> String {
    let mut s = String::from("label,mean,variance,ce,cv,n,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            csv_field(&r.label),
            fmt_f64(r.stats.mean),
            fmt_f64(r.stats.variance),
            fmt_f64(r.stats.ce),
            fmt_f64(r.stats.cv),
            r.stats.n,
            r.seed
        );
    }
    s
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut s = String::from("wealth,pi,nu\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", fmt_f64(p.wealth), fmt_f64(p.pi), fmt_f64(p.nu));
    }
    s
}

/// `scatter_t{t}.csv`, with `t` printed in its shortest exact form.
pub fn scatter_file_name(t: f64) -> String {
    format!("scatter_t{t}.csv")
}

/// Resolved configuration preceded by a version comment; re-parses with
/// [`crate::config::parse_config`].
pub fn manifest(config: &RunConfig) -> String {
    format!(
        "# {} {}\n{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        config.to_toml()
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes files into an output directory, creating it on first use.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| Error::Write {
            path: root.clone(),
            source,
        })?;
        Ok(OutputDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|source| Error::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn strategy_path(&self, name: &str, means: &PathMeans) -> Result<PathBuf> {
        self.write(name, &strategy_path_csv(means))
    }

    pub fn terminal_stats(&self, rows: &[StatsRow]) -> Result<PathBuf> {
        self.write(TERMINAL_STATS, &terminal_stats_csv(rows))
    }

    pub fn scatter(&self, t: f64, points: &[ScatterPoint]) -> Result<PathBuf> {
        self.write(&scatter_file_name(t), &scatter_csv(points))
    }

    pub fn manifest(&self, config: &RunConfig) -> Result<PathBuf> {
        self.write(MANIFEST, &manifest(config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn stats() -> TerminalStats {
        TerminalStats {
            mean: 26.5,
            variance: 0.1 + 0.2,
            ce: 22.0,
            cv: 1.0 / 3.0,
            n: 50000,
        }
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1 + 0.2, 1.0 / 3.0, 1e-300, -7.25, 0.78895] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_layouts() {
        let means = PathMeans {
            time: vec![0.0, 0.05],
            mean_pi: vec![0.8, 0.79],
            mean_wealth: vec![5.0, 5.1],
            mean_contribution: vec![1.0, 1.002],
        };
        let csv = strategy_path_csv(&means);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "t,mean_pi,mean_wealth,mean_contribution");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.79);

        let rows = [
            StatsRow { label: "cvm".into(), stats: stats(), seed: 4 },
            StatsRow { label: "a,b".into(), stats: stats(), seed: 5 },
        ];
        let csv = terminal_stats_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "label,mean,variance,ce,cv,n,seed");
        assert!(lines[1].starts_with("cvm,") && lines[1].ends_with(",50000,4"));
        assert!(lines[2].starts_with("\"a,b\","));
        assert_eq!(lines[1].split(',').nth(2).unwrap().parse::<f64>().unwrap(), 0.1 + 0.2);

        let pts = [ScatterPoint { wealth: 6.0, pi: 0.5, nu: 0.02 }];
        assert_eq!(scatter_csv(&pts).lines().count(), 2);
        assert_eq!(scatter_file_name(5.0), "scatter_t5.csv");
        assert_eq!(scatter_file_name(2.5), "scatter_t2.5.csv");
    }

    #[test]
    fn manifest_reparses() {
        let mut cfg = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        cfg.algo.paths = 1234;
        let text = manifest(&cfg);
        assert!(text.starts_with("# glidepath "));
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn writes_into_new_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let out = OutputDir::create(tmp.path().join("a/b")).unwrap();
        let p = out.terminal_stats(&[]).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "label,mean,variance,ce,cv,n,seed\n");
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let tmp = tempfile::tempdir().unwrap();
        let file = tmp.path().join("plain");
        fs::write(&file, "x").unwrap();
        let err = OutputDir::create(file.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Write { .. }));
        assert!(err.to_string().contains("plain"));
    }
}

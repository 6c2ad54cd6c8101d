//! Command-line front end. Exit codes: 0 success, 1 pip-check disagreement,
//! 2 configuration or I/O error, 3 scenario stopped by the solver fail-safe.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::pipcheck::{residual_classifier, run_pip_check};
use crate::sim::{
    offsets_from_mm, run_coupling_experiment, run_decoupling_experiment, run_scenario, run_timing_benchmark,
    summarize_offsets, write_csv, ScenarioConfig, Termination,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DISAGREEMENT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAIL_SAFE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flexcouple", version, about = "Coupling MPC, anchor simulator and experiment harnesses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario file (TOML). Defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario schedule and log every planning step.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Coupling success rate and time against lateral offset.
    CoupleBench {
        #[command(flatten)]
        common: Common,
        /// Offsets in mm: a list `0,4,8` or an inclusive range `0:30:2`.
        #[arg(long)]
        offsets: Option<String>,
        /// Trials per offset.
        #[arg(long)]
        trials: Option<usize>,
        /// Per-trial time limit in seconds.
        #[arg(long = "timeout-s")]
        timeout_s: Option<f64>,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Wiggle decoupling success rate and time.
    DecoupleBench {
        #[command(flatten)]
        common: Common,
        /// Decoupling trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Per-trial time limit in seconds.
        #[arg(long = "timeout-s")]
        timeout_s: Option<f64>,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Median solve time over robot counts and horizons.
    TimingBench {
        #[command(flatten)]
        common: Common,
        /// Robot counts, e.g. `2,4,6,8`.
        #[arg(long, value_delimiter = ',')]
        robots: Option<Vec<usize>>,
        /// Horizon lengths, e.g. `3,5,10`.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        /// Solves per cell.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Fuzz the polygon residuals against a ray-casting oracle.
    PipCheck {
        #[command(flatten)]
        common: Common,
        /// Number of (polygon, point) samples.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub artifacts: Vec<String>,
    pub config_hash: String,
    pub exit_code: i32,
}

/// Parses the range syntax `a:b:step` (inclusive) or a comma list.
pub fn parse_offsets(text: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config { path: "--offsets".into(), message: m };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let parts: Vec<&str> = text.split(':').collect();
    let out = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0 && b >= a) {
                return Err(bad("range needs start <= stop and a positive step".into()));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| a + k as f64 * step).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected `a:b:step` or a comma list".into())),
    };
    if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
        return Err(bad("offsets must be finite".into()));
    }
    Ok(out)
}

struct Run {
    common: Common,
    cfg: ScenarioConfig,
    artifacts: Vec<String>,
}

impl Run {
    fn path(&self, file: &str) -> PathBuf {
        self.common.out.join(file)
    }

    fn csv<T: Serialize>(&mut self, file: &str, rows: &[T]) -> Result<()> {
        write_csv(&self.path(file), rows)?;
        self.artifacts.push(file.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        write_json(&self.path(file), value)?;
        self.artifacts.push(file.into());
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct OffsetRow {
    offset_mm: f64,
    trials: usize,
    successes: usize,
    rate: f64,
    mean_time_s: f64,
}

#[derive(Serialize)]
struct DecoupleRow {
    trials: usize,
    successes: usize,
    rate: f64,
    mean_time_s: f64,
    pull_blocked: usize,
    faulted: usize,
}

#[derive(Serialize)]
struct TimingRow {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "H_m")]
    h_m: usize,
    median_ms: f64,
    median_iterations: usize,
    converged: usize,
    solves: usize,
}

#[derive(Serialize)]
struct PipRow {
    samples: usize,
    seed: u64,
    inside: usize,
    disagreements: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn execute(run: &mut Run, command: &Command) -> Result<i32> {
    let cfg = run.cfg.clone();
    let seed = cfg.seed;
    match command {
        Command::Simulate { .. } => {
            let log = run_scenario(&cfg)?;
            run.csv("trajectory.csv", &log.rows)?;
            run.json("summary.json", &log.summary)?;
            let s = &log.summary;
            println!(
                "simulated {:.1} s, {} solves ({} fail-safe), coupled at {}",
                s.duration_s,
                s.solver.solves,
                s.solver.fail_safe,
                s.coupled_at_s.map_or("-".into(), |t| format!("{t:.1} s"))
            );
            for p in &s.pairs {
                println!("  pair {}-{}: {}", p.robots.0, p.robots.1, p.status);
            }
            if s.termination == Termination::FailSafe {
                eprintln!("stopped: solver fail-safe persisted for {} solves", cfg.fail_safe_limit);
                return Ok(EXIT_FAIL_SAFE);
            }
        }
        Command::CoupleBench { offsets, trials, timeout_s, workers, .. } => {
            let offsets_mm = match offsets {
                Some(t) => parse_offsets(t)?,
                None => cfg.couple.offsets_mm.clone(),
            };
            let trials = trials.unwrap_or(cfg.couple.trials);
            if trials == 0 {
                return Err(Error::Config { path: "--trials".into(), message: "must be at least 1".into() });
            }
            let mut setup = cfg.couple.setup();
            if let Some(t) = timeout_s {
                setup.timeout_s = *t;
            }
            let settings = cfg.settings()?;
            let offs = offsets_from_mm(&offsets_mm);
            let results = run_coupling_experiment(&settings, &setup, &offs, trials, seed, *workers)?;
            let rows: Vec<OffsetRow> = summarize_offsets(&offs, &results)
                .iter()
                .zip(&offsets_mm)
                .map(|(s, mm)| OffsetRow {
                    offset_mm: *mm,
                    trials: s.trials,
                    successes: s.successes,
                    rate: s.success_rate,
                    mean_time_s: s.mean_time_s,
                })
                .collect();
            for r in &rows {
                println!("offset {:>5.1} mm  rate {:.3}  mean time {:.2} s", r.offset_mm, r.rate, r.mean_time_s);
            }
            run.csv("couple_bench.csv", &rows)?;
            run.csv("couple_trials.csv", &results)?;
        }
        Command::DecoupleBench { trials, timeout_s, workers, .. } => {
            let trials = trials.unwrap_or(cfg.decouple.trials);
            if trials == 0 {
                return Err(Error::Config { path: "--trials".into(), message: "must be at least 1".into() });
            }
            let mut setup = cfg.decouple.setup();
            if let Some(t) = timeout_s {
                setup.timeout_s = *t;
            }
            let settings = cfg.settings()?;
            let results = run_decoupling_experiment(&settings, &setup, trials, seed, *workers)?;
            let times: Vec<f64> = results.iter().filter(|r| r.success).map(|r| r.time_s).collect();
            let row = DecoupleRow {
                trials,
                successes: times.len(),
                rate: times.len() as f64 / trials as f64,
                mean_time_s: mean(&times),
                pull_blocked: results.iter().filter(|r| r.pull_blocked).count(),
                faulted: results.iter().filter(|r| r.faulted).count(),
            };
            println!("decoupled {}/{} (rate {:.3}), mean time {:.2} s", row.successes, trials, row.rate, row.mean_time_s);
            run.csv("decouple_bench.csv", &[row])?;
            run.csv("decouple_trials.csv", &results)?;
        }
        Command::TimingBench { robots, horizons, trials, .. } => {
            let robots = robots.clone().unwrap_or_else(|| cfg.timing.robots.clone());
            let horizons = horizons.clone().unwrap_or_else(|| cfg.timing.horizons.clone());
            let solves = trials.unwrap_or(cfg.timing.solves);
            if solves == 0 || robots.iter().chain(&horizons).any(|v| *v == 0) {
                return Err(Error::Config {
                    path: "timing".into(),
                    message: "solves, robot counts and horizons must be at least 1".into(),
                });
            }
            let settings = cfg.settings()?;
            let cells = run_timing_benchmark(&settings, &robots, &horizons, solves, seed)?;
            let rows: Vec<TimingRow> = cells
                .iter()
                .map(|c| TimingRow {
                    n: c.robots,
                    h_m: c.horizon,
                    median_ms: c.median_ms,
                    median_iterations: c.median_iterations,
                    converged: c.converged,
                    solves: c.solves,
                })
                .collect();
            for r in &rows {
                println!("N={:<2} H_m={:<2} median {:8.3} ms  ({} iterations)", r.n, r.h_m, r.median_ms, r.median_iterations);
            }
            run.csv("timing_bench.csv", &rows)?;
        }
        Command::PipCheck { trials, .. } => {
            if *trials == 0 {
                return Err(Error::Config { path: "--trials".into(), message: "must be at least 1".into() });
            }
            let report = run_pip_check(*trials, seed, residual_classifier);
            run.csv(
                "pip_check.csv",
                &[PipRow { samples: report.samples, seed, inside: report.inside, disagreements: report.disagreements.len() }],
            )?;
            if !report.passed() {
                run.json("pip_counterexamples.json", &report.disagreements)?;
                for c in report.disagreements.iter().take(10) {
                    eprintln!(
                        "sample {}: point ({}, {}) residuals say {}, oracle says {}; polygon {:?}",
                        c.sample,
                        c.point.x,
                        c.point.y,
                        if c.classified_inside { "inside" } else { "outside" },
                        if c.oracle_inside { "inside" } else { "outside" },
                        c.polygon.iter().map(|v| (v.x, v.y)).collect::<Vec<_>>()
                    );
                }
                eprintln!("{} of {} samples disagree", report.disagreements.len(), report.samples);
                return Ok(EXIT_DISAGREEMENT);
            }
            println!("{} samples, {} inside, no disagreements", report.samples, report.inside);
        }
    }
    Ok(EXIT_OK)
}

fn parts(command: &Command) -> (&'static str, &Common) {
    match command {
        Command::Simulate { common } => ("simulate", common),
        Command::CoupleBench { common, .. } => ("couple-bench", common),
        Command::DecoupleBench { common, .. } => ("decouple-bench", common),
        Command::TimingBench { common, .. } => ("timing-bench", common),
        Command::PipCheck { common, .. } => ("pip-check", common),
    }
}

/// Runs a parsed command, writes the manifest and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let (name, common) = parts(&cli.command);
    let common = common.clone();
    if name == "simulate" && common.config.is_none() {
        eprintln!("error: simulate needs --config");
        return EXIT_CONFIG;
    }
    let cfg = match load(&common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(source) = std::fs::create_dir_all(&common.out) {
        eprintln!("error: cannot create {}: {source}", common.out.display());
        return EXIT_CONFIG;
    }
    let mut run = Run { common, cfg, artifacts: Vec::new() };
    let code = match execute(&mut run, &cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    };
    let manifest = RunManifest {
        command: name.into(),
        config_path: run.common.config.as_ref().map(|p| p.display().to_string()),
        seed: run.cfg.seed,
        out_dir: run.common.out.display().to_string(),
        artifacts: run.artifacts.iter().cloned().chain(std::iter::once("manifest.json".into())).collect(),
        config_hash: run.cfg.hash(),
        exit_code: code,
    };
    if let Err(e) = write_json(&run.path("manifest.json"), &manifest) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    code
}

/// Entry point for the binary: parses `std::env::args`.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_range_and_list() {
        assert_eq!(parse_offsets("0:30:2").unwrap().len(), 16);
        assert_eq!(parse_offsets("0,4, 8").unwrap(), vec![0.0, 4.0, 8.0]);
        assert!(parse_offsets("3:1:1").is_err());
        assert!(parse_offsets("a,b").is_err());
    }

    #[test]
    fn every_subcommand_has_help() {
        for sub in ["simulate", "couple-bench", "decouple-bench", "timing-bench", "pip-check"] {
            let e = Cli::try_parse_from(["flexcouple", sub, "--help"]).unwrap_err();
            assert_eq!(e.kind(), clap::error::ErrorKind::DisplayHelp);
            assert!(!e.use_stderr());
        }
    }
}

//! Config files, report and trajectory writers, and the command-line surface.
//!
//! A config is a flat `key = value` document; `#` starts a comment. Lists are
//! comma-separated and grids are either lists or `start:step:end`.
//!
//! ```text
//! J = 2
//! lambda = 0.3, 0.2, 0.4
//! mu = 1, 1, 1
//! n = 100000
//! replicas = 50
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::harness::{
    convergence_sweep, run_scale, stepped_grid, verify, Check, ExperimentPlan, HarnessError,
    TimeScale, Tolerances,
};
use crate::model::{validate_params, ModelError, NetworkParams};
use crate::oracles::{kingman_bound, reflected_sup_bound};
use crate::sim::{Trajectory, RNG_ALGORITHM};
use crate::theory::regime;

pub const DEFAULT_N: u64 = 100_000;
pub const DEFAULT_REPLICAS: usize = 50;

const KEYS: &[&str] = &[
    "J",
    "lambda",
    "mu",
    "n",
    "n_list",
    "replicas",
    "seed",
    "t_grid",
    "fluid_t_grid",
    "output_dir",
    "checks",
    "allow_partial",
    "max_events",
    "stability_horizon",
    "stability_replicas",
    "growth_horizons",
    "martingale_step",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice (first on line {first})")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("missing mandatory key `{0}`")]
    Missing(&'static str),
    #[error("line {line}: `n` and `n_list` are mutually exclusive")]
    Conflict { line: usize },
    #[error("line {line}: key `{key}`: {source}")]
    Model {
        line: usize,
        key: &'static str,
        source: ModelError,
    },
    #[error(transparent)]
    Plan(HarnessError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: NetworkParams,
    pub plan: ExperimentPlan,
    pub output_dir: PathBuf,
}

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

impl Entry<'_> {
    fn err(&self, key: &str, reason: impl ToString) -> ConfigError {
        ConfigError::Value {
            line: self.line,
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e| self.err(key, e))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.value
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| self.err(key, e)))
            .collect()
    }

    fn grid(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let parts: Vec<&str> = self.value.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [_single] => self.list(key),
            [start, step, end] => {
                let num = |s: &str| s.parse::<f64>().map_err(|e| self.err(key, e));
                let (start, step, end) = (num(start)?, num(step)?, num(end)?);
                let g = stepped_grid(start, step, end);
                if g.is_empty() {
                    return Err(self.err(key, "empty grid"));
                }
                Ok(g)
            }
            _ => Err(self.err(key, "expected a list or start:step:end")),
        }
    }
}

fn tolerance_keys() -> Vec<String> {
    match serde_json::to_value(Tolerances::default()) {
        Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Parses and fully validates a config document.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let tol_keys = tolerance_keys();
    let mut entries: BTreeMap<&str, Entry> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) && !tol_keys.iter().any(|k| k == key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some(prev) = entries.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first: prev.line,
            });
        }
        entries.insert(key, Entry { line, value });
    }

    let get = |k: &'static str| entries.get(k).ok_or(ConfigError::Missing(k));
    let j_entry = get("J")?;
    let j: usize = j_entry.parse("J")?;
    let lambda_entry = get("lambda")?;
    let lambda: Vec<f64> = lambda_entry.list("lambda")?;
    let mu_entry = get("mu")?;
    let mu: Vec<f64> = mu_entry.list("mu")?;
    let params = NetworkParams::new_unchecked(j, lambda, mu);
    if let Err(source) = validate_params(&params, false) {
        let (line, key) = match &source {
            ModelError::Arity { field: "mu", .. }
            | ModelError::NonPositiveRate { field: "mu", .. } => (mu_entry.line, "mu"),
            ModelError::NoPeripheralNodes => (j_entry.line, "J"),
            _ => (lambda_entry.line, "lambda"),
        };
        return Err(ConfigError::Model { line, key, source });
    }

    let n_values = match (entries.get("n"), entries.get("n_list")) {
        (Some(_), Some(b)) => return Err(ConfigError::Conflict { line: b.line }),
        (Some(e), None) => vec![e.parse("n")?],
        (None, Some(e)) => e.list("n_list")?,
        (None, None) => vec![DEFAULT_N],
    };
    let replicas = match entries.get("replicas") {
        Some(e) => e.parse("replicas")?,
        None => DEFAULT_REPLICAS,
    };
    let seed = match entries.get("seed") {
        Some(e) => e.parse("seed")?,
        None => 0,
    };

    let mut plan = ExperimentPlan::new(params.clone(), n_values, replicas, seed);
    if let Some(e) = entries.get("t_grid") {
        plan.t_grid = e.grid("t_grid")?;
    }
    if let Some(e) = entries.get("fluid_t_grid") {
        plan.fluid_t_grid = e.grid("fluid_t_grid")?;
    }
    if let Some(e) = entries.get("growth_horizons") {
        plan.growth_horizons = e.grid("growth_horizons")?;
    }
    if let Some(e) = entries.get("checks") {
        plan.checks = if e.value == "all" {
            Check::ALL.to_vec()
        } else {
            e.value
                .split(',')
                .map(|s| {
                    Check::parse(s.trim())
                        .ok_or_else(|| e.err("checks", format!("unknown check `{}`", s.trim())))
                })
                .collect::<Result<_, _>>()?
        };
    }
    if let Some(e) = entries.get("allow_partial") {
        plan.allow_partial = e.parse("allow_partial")?;
    }
    if let Some(e) = entries.get("max_events") {
        plan.max_events = e.parse("max_events")?;
    }
    if let Some(e) = entries.get("stability_horizon") {
        plan.stability_horizon = e.parse("stability_horizon")?;
    }
    if let Some(e) = entries.get("stability_replicas") {
        plan.stability_replicas = e.parse("stability_replicas")?;
    }
    if let Some(e) = entries.get("martingale_step") {
        plan.martingale_step = e.parse("martingale_step")?;
    }

    let mut tol = serde_json::to_value(&plan.tolerances).expect("tolerances serialize");
    for key in &tol_keys {
        if let Some(e) = entries.get(key.as_str()) {
            let v = if key == "min_returns" {
                serde_json::Value::from(e.parse::<u64>(key)?)
            } else {
                let x: f64 = e.parse(key)?;
                if !x.is_finite() || x < 0.0 {
                    return Err(e.err(key, "must be finite and non-negative"));
                }
                serde_json::Value::from(x)
            };
            tol[key.as_str()] = v;
        }
    }
    plan.tolerances = serde_json::from_value(tol).expect("tolerance keys round-trip");

    plan.validate().map_err(ConfigError::Plan)?;
    let output_dir = entries
        .get("output_dir")
        .map_or_else(|| PathBuf::from("."), |e| PathBuf::from(e.value));
    Ok(Config {
        params,
        plan,
        output_dir,
    })
}

/// Fixed 17-significant-digit rendering, so identical runs give identical bytes.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// `replica,t,node,count` rows, one per replica, grid point and node.
pub fn trajectories_csv(grid: &[f64], trajectories: &[Trajectory]) -> String {
    let mut out = String::from("replica,t,node,count\n");
    for traj in trajectories {
        for (t, sample) in grid.iter().zip(&traj.samples) {
            let t = format_real(*t);
            for (node, count) in sample.state.counts().iter().enumerate() {
                let _ = writeln!(out, "{},{t},{node},{count}", traj.stream & 0xffff_ffff);
            }
        }
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn version_string() -> String {
    format!("starnet {} (rng {RNG_ALGORITHM})", crate::VERSION)
}

#[derive(Debug, Parser)]
#[command(
    name = "starnet",
    about = "Star-network simulation and verification",
    disable_version_flag = true
)]
struct Cli {
    /// Print the artifact and RNG algorithm identifiers.
    #[arg(short = 'V', long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the regime report for a config.
    Predict { config: PathBuf },
    /// Write sampled trajectories as CSV on both time scales.
    Simulate { config: PathBuf },
    /// Run the verification harness and write report.json.
    Verify { config: PathBuf },
    /// Run the convergence sweep and write sweep.json.
    Sweep { config: PathBuf },
    /// Closed-form birth-death bounds.
    Oracle {
        #[command(subcommand)]
        oracle: Oracle,
    },
}

#[derive(Debug, Subcommand)]
enum Oracle {
    /// `(lambda/mu)^x`, plus `(lambda T + 1)(lambda/mu)^x` when `--T` is given.
    Kingman {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        x: u32,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
}

/// Exit status of a command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    color: bool,
}

impl Io<'_> {
    fn verdict(&self, pass: bool) -> &'static str {
        match (pass, self.color) {
            (true, true) => "\x1b[32mPASS\x1b[0m",
            (false, true) => "\x1b[31mFAIL\x1b[0m",
            (true, false) => "PASS",
            (false, false) => "FAIL",
        }
    }

    fn fail(&mut self, msg: impl std::fmt::Display) -> i32 {
        let _ = writeln!(self.err, "error: {msg}");
        exit::USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
/// `color` enables ANSI verdicts; callers should clear it when `NO_COLOR`
/// is set or the output is not a terminal.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut io = Io { out, err, color };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(io.err, "{text}")
            } else {
                write!(io.out, "{text}")
            };
            return code;
        }
    };
    if cli.version {
        let _ = writeln!(io.out, "{}", version_string());
        return exit::OK;
    }
    let Some(command) = cli.command else {
        return io.fail("no command given; see --help");
    };
    match command {
        Command::Predict { config } => with_config(&mut io, &config, predict),
        Command::Simulate { config } => with_config(&mut io, &config, simulate_cmd),
        Command::Verify { config } => with_config(&mut io, &config, verify_cmd),
        Command::Sweep { config } => with_config(&mut io, &config, sweep_cmd),
        Command::Oracle {
            oracle:
                Oracle::Kingman {
                    lambda,
                    mu,
                    x,
                    horizon,
                },
        } => {
            let bound = match kingman_bound(lambda, mu, x) {
                Ok(b) => b,
                Err(e) => return io.fail(e),
            };
            let _ = writeln!(io.out, "kingman {bound}");
            if let Some(t) = horizon {
                match reflected_sup_bound(lambda, mu, t, x) {
                    Ok(b) => {
                        let _ = writeln!(io.out, "reflected {b}");
                    }
                    Err(e) => return io.fail(e),
                }
            }
            exit::OK
        }
    }
}

fn with_config(io: &mut Io, path: &Path, run: fn(&mut Io, &Config) -> i32) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return io.fail(format_args!("{}: {e}", path.display())),
    };
    match parse_config(&text) {
        Ok(cfg) => run(io, &cfg),
        Err(e) => io.fail(format_args!("{}: {e}", path.display())),
    }
}

fn predict(io: &mut Io, cfg: &Config) -> i32 {
    match regime(&cfg.params) {
        Ok(r) => {
            let text = serde_json::to_string_pretty(&r).expect("report serializes");
            let _ = writeln!(io.out, "{text}");
            exit::OK
        }
        Err(e) => io.fail(e),
    }
}

fn simulate_cmd(io: &mut Io, cfg: &Config) -> i32 {
    let plan = &cfg.plan;
    for &n in &plan.n_values {
        let mut scales = vec![(TimeScale::Exponent, "exponent", &plan.t_grid)];
        if !plan.fluid_t_grid.is_empty() {
            scales.push((TimeScale::Fluid, "fluid", &plan.fluid_t_grid));
        }
        for (scale, name, grid) in scales {
            let ens = match run_scale(plan, n, scale, grid) {
                Ok(e) => e,
                Err(e) => return io.fail(e),
            };
            let path = cfg.output_dir.join(format!("trajectories_N{n}_{name}.csv"));
            if let Err(e) =
                write_atomic(&path, trajectories_csv(grid, &ens.trajectories).as_bytes())
            {
                return io.fail(format_args!("{}: {e}", path.display()));
            }
            let _ = writeln!(io.out, "wrote {}", path.display());
        }
    }
    exit::OK
}

fn verify_cmd(io: &mut Io, cfg: &Config) -> i32 {
    let report = match verify(&cfg.plan) {
        Ok(r) => r,
        Err(e) => return io.fail(e),
    };
    let path = cfg.output_dir.join("report.json");
    if let Err(e) = write_json(&path, &report) {
        return io.fail(format_args!("{}: {e}", path.display()));
    }
    for e in &report.entries {
        let n = e.n.map_or(String::new(), |n| format!(" N={n}"));
        let _ = writeln!(
            io.out,
            "{} {}{n}: measured {:.6} predicted {:.6} ({})",
            io.verdict(e.pass),
            e.id,
            e.measured,
            e.predicted,
            e.description
        );
    }
    let _ = writeln!(
        io.out,
        "{} overall; report at {}",
        io.verdict(report.pass),
        path.display()
    );
    if report.pass {
        exit::OK
    } else {
        exit::FAILED
    }
}

fn sweep_cmd(io: &mut Io, cfg: &Config) -> i32 {
    let table = match convergence_sweep(&cfg.plan) {
        Ok(t) => t,
        Err(e) => return io.fail(e),
    };
    let path = cfg.output_dir.join("sweep.json");
    if let Err(e) = write_json(&path, &table) {
        return io.fail(format_args!("{}: {e}", path.display()));
    }
    for row in &table.rows {
        let cells: Vec<String> = row
            .errors
            .iter()
            .map(|(f, v)| format!("{f}={v:.4}"))
            .collect();
        let _ = writeln!(io.out, "N={} {}", row.n, cells.join(" "));
    }
    for (family, v) in &table.verdicts {
        let _ = writeln!(
            io.out,
            "{} {family}: {} inversions",
            io.verdict(v.monotone),
            v.inversions
        );
    }
    if table.monotone() {
        exit::OK
    } else {
        exit::FAILED
    }
}

//! Monte-Carlo ensembles and verification of the closed-form predictions.
//!
//! Every check produces a [`CriterionEntry`] carrying the predicted value,
//! the measured value, the tolerance and the verdict. Replica `r` of an
//! ensemble uses ChaCha stream `tag << 32 | r` under the plan's master seed,
//! where `tag` identifies the experiment (exponent scale, fluid scale, ...),
//! so reports are a pure function of the plan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_params, ModelError, NetworkParams, QueueState, Transition};
use crate::oracles::{harmonic_residual, OracleError};
use crate::serde_inf;
use crate::sim::{
    power_grid, simulate, simulate_observed, PathObserver, SimConfig, SimError, Trajectory,
    DEFAULT_MAX_EVENTS, RNG_ALGORITHM,
};
use crate::stats::{mean, ols_slope, quantile, std_error};
use crate::theory::{
    equilibrium_product_constant, fluid_from_report, regime, stability, FluidScale, RegimeReport,
    Segment, TheoryError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("{count} of {replicas} replicas exhausted the event budget (first: replica {first})")]
    Truncated {
        count: usize,
        replicas: usize,
        first: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Additive tolerance on exponents, before the `c / log N` term.
    pub exponent_tol: f64,
    /// `c` in `exponent_tol + c / log N`.
    pub exponent_log_coeff: f64,
    pub fluid_rel_tol: f64,
    /// Relative tolerance for the central node on the fluid scale.
    pub center_rel_tol: f64,
    pub drift_rel_tol: f64,
    pub confinement_quantile: f64,
    /// Multiplicative band for prefactor checks.
    pub prefactor_factor: f64,
    /// Band around 1 for `L_0(N^t) / N`.
    pub center_band: f64,
    /// Vanish-time bound is `N^{e_j} log N (1 + vanish_margin)`.
    pub vanish_margin: f64,
    /// Distance (in `t`) kept from phase boundaries.
    pub window_margin: f64,
    pub martingale_bands: f64,
    pub martingale_coverage: f64,
    pub stationarity_rel_tol: f64,
    pub min_returns: u64,
    pub growth_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            exponent_tol: 0.05,
            exponent_log_coeff: 2.0,
            fluid_rel_tol: 0.15,
            center_rel_tol: 0.10,
            drift_rel_tol: 0.15,
            confinement_quantile: 0.95,
            prefactor_factor: 2.0,
            center_band: 0.02,
            vanish_margin: 1.0,
            window_margin: 0.05,
            martingale_bands: 3.0,
            martingale_coverage: 0.90,
            stationarity_rel_tol: 0.25,
            min_returns: 100,
            growth_sigmas: 3.0,
        }
    }
}

impl Tolerances {
    pub fn exponent_band(&self, n: u64) -> f64 {
        self.exponent_tol + self.exponent_log_coeff / (n as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Exponent profile, product invariance, prefactors, confinement.
    Exponent,
    /// `L_j(N^t) / N^t` on rising segments.
    Drift,
    /// Hitting times of zero after the peak.
    Vanish,
    Fluid,
    Stability,
    Martingale,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Exponent,
        Check::Drift,
        Check::Vanish,
        Check::Fluid,
        Check::Stability,
        Check::Martingale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Exponent => "exponent",
            Check::Drift => "drift",
            Check::Vanish => "vanish",
            Check::Fluid => "fluid",
            Check::Stability => "stability",
            Check::Martingale => "martingale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub params: NetworkParams,
    pub n_values: Vec<u64>,
    pub replicas: usize,
    /// Exponent-scale grid: samples at `N^t`.
    pub t_grid: Vec<f64>,
    /// Fluid-scale grid: samples at `N t`.
    pub fluid_t_grid: Vec<f64>,
    pub master_seed: u64,
    pub tolerances: Tolerances,
    pub checks: Vec<Check>,
    /// Keep going when some replicas hit the event budget.
    pub allow_partial: bool,
    pub max_events: u64,
    pub stability_horizon: f64,
    pub stability_replicas: usize,
    /// Observation times for the growth fit of unstable networks.
    pub growth_horizons: Vec<f64>,
    pub martingale_step: f64,
}

impl ExperimentPlan {
    /// Plan with the documented defaults: `t_grid` in 0.02 steps over
    /// `[0.02, 0.98]`, `fluid_t_grid` in 0.1 steps up to `min(0.9 t_0, 2)`.
    pub fn new(
        params: NetworkParams,
        n_values: Vec<u64>,
        replicas: usize,
        master_seed: u64,
    ) -> Self {
        let fluid_t_grid = default_fluid_grid(&params);
        Self {
            params,
            n_values,
            replicas,
            t_grid: stepped_grid(0.02, 0.02, 0.98),
            fluid_t_grid,
            master_seed,
            tolerances: Tolerances::default(),
            checks: Check::ALL.to_vec(),
            allow_partial: false,
            max_events: DEFAULT_MAX_EVENTS,
            stability_horizon: 1e6,
            stability_replicas: 4,
            growth_horizons: stepped_grid(1e4, 1e4, 1e5),
            martingale_step: 0.01,
        }
    }

    pub fn with_checks(mut self, checks: &[Check]) -> Self {
        self.checks = checks.to_vec();
        self
    }

    pub fn enabled(&self, check: Check) -> bool {
        self.checks.contains(&check)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        validate_params(&self.params, false)?;
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 2) {
            return Err(HarnessError::Plan("every N must be at least 2".into()));
        }
        if self.replicas < 2 {
            return Err(HarnessError::Plan("replicas must be at least 2".into()));
        }
        strictly_increasing("t_grid", &self.t_grid)?;
        if self.t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(HarnessError::Plan("t_grid must lie in (0, 1)".into()));
        }
        strictly_increasing("fluid_t_grid", &self.fluid_t_grid)?;
        if self
            .fluid_t_grid
            .iter()
            .any(|&t| !(t > 0.0 && t.is_finite()))
        {
            return Err(HarnessError::Plan("fluid_t_grid must be positive".into()));
        }
        strictly_increasing("growth_horizons", &self.growth_horizons)?;
        if self.max_events == 0 {
            return Err(HarnessError::Plan("max_events must be positive".into()));
        }
        Ok(())
    }
}

fn strictly_increasing(name: &str, xs: &[f64]) -> Result<(), HarnessError> {
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HarnessError::Plan(format!(
            "{name} must be strictly increasing"
        )));
    }
    Ok(())
}

/// `start, start + step, ...` up to `end` inclusive (with rounding slack).
pub fn stepped_grid(start: f64, step: f64, end: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return Vec::new();
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    (0..=count)
        .map(|k| {
            // Round to the step's decimal resolution so grids print cleanly.
            let v = start + k as f64 * step;
            (v * 1e12).round() / 1e12
        })
        .collect()
}

pub fn default_fluid_grid(params: &NetworkParams) -> Vec<f64> {
    match regime(params) {
        Ok(r) => {
            let end = (0.9 * r.t_zero).min(2.0);
            stepped_grid(0.1, 0.1, end)
        }
        Err(_) => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// Samples at `N^t`.
    Exponent,
    /// Samples at `N t`.
    Fluid,
}

impl TimeScale {
    fn tag(self) -> u64 {
        match self {
            TimeScale::Exponent => 0,
            TimeScale::Fluid => 1,
        }
    }

    pub fn physical_times(self, n: u64, grid: &[f64]) -> Vec<f64> {
        match self {
            TimeScale::Exponent => power_grid(n, grid),
            TimeScale::Fluid => grid.iter().map(|&t| t * n as f64).collect(),
        }
    }
}

const TAG_VANISH: u64 = 2;
const TAG_STABLE: u64 = 3;
const TAG_GROWTH: u64 = 4;
const TAG_MARTINGALE: u64 = 5;

fn stream(tag: u64, replica: usize) -> u64 {
    (tag << 32) | replica as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub mean: f64,
    pub se: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub exponent_mean: f64,
    pub exponent_se: f64,
    pub exponent_q05: f64,
    pub exponent_q50: f64,
    pub exponent_q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub t: f64,
    pub time: f64,
    pub nodes: Vec<NodeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n: u64,
    pub scale: TimeScale,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    pub truncated: Vec<usize>,
    pub stats: Vec<PointStats>,
}

impl Ensemble {
    pub fn replicas(&self) -> usize {
        self.trajectories.len()
    }

    /// Values of `f(state)` across replicas at grid index `k`.
    pub fn column<F: Fn(&QueueState) -> f64>(&self, k: usize, f: F) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(|tr| f(&tr.samples[k].state))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub exponent: Ensemble,
    pub fluid: Option<Ensemble>,
}

/// Replicas on the exponent scale, plus the fluid scale when fluid checks
/// are planned and the fluid grid is non-empty.
pub fn run_ensemble(plan: &ExperimentPlan, n: u64) -> Result<EnsembleRun, HarnessError> {
    plan.validate()?;
    let exponent = run_scale(plan, n, TimeScale::Exponent, &plan.t_grid)?;
    let fluid = if plan.enabled(Check::Fluid) && !plan.fluid_t_grid.is_empty() {
        Some(run_scale(plan, n, TimeScale::Fluid, &plan.fluid_t_grid)?)
    } else {
        None
    };
    Ok(EnsembleRun { exponent, fluid })
}

/// One ensemble on a single time scale.
pub fn run_scale(
    plan: &ExperimentPlan,
    n: u64,
    scale: TimeScale,
    grid: &[f64],
) -> Result<Ensemble, HarnessError> {
    let times = scale.physical_times(n, grid);
    let horizon = times.last().copied().unwrap_or(0.0);
    let init = QueueState::loaded_center(plan.params.j(), n);
    let runs: Vec<Result<Trajectory, SimError>> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig::new(plan.master_seed, horizon, times.clone())
                .with_stream(stream(scale.tag(), r))
                .with_max_events(plan.max_events);
            simulate(&plan.params, &init, &cfg).map(|mut t| {
                t.scale = Some(n);
                t
            })
        })
        .collect();
    let mut trajectories = Vec::with_capacity(runs.len());
    let mut truncated = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        let traj = run?;
        if traj.truncated {
            truncated.push(r);
        } else {
            trajectories.push(traj);
        }
    }
    if !truncated.is_empty() && (!plan.allow_partial || trajectories.is_empty()) {
        return Err(HarnessError::Truncated {
            count: truncated.len(),
            replicas: plan.replicas,
            first: truncated[0],
        });
    }
    let stats = point_stats(&trajectories, n, grid, &times);
    Ok(Ensemble {
        n,
        scale,
        grid: grid.to_vec(),
        seed: plan.master_seed,
        trajectories,
        truncated,
        stats,
    })
}

fn point_stats(trajs: &[Trajectory], n: u64, grid: &[f64], times: &[f64]) -> Vec<PointStats> {
    let log_n = (n as f64).ln();
    let nodes = trajs.first().map_or(0, |t| t.initial.len());
    grid.iter()
        .zip(times)
        .enumerate()
        .map(|(k, (&t, &time))| PointStats {
            t,
            time,
            nodes: (0..nodes)
                .map(|j| {
                    let l: Vec<f64> = trajs
                        .iter()
                        .map(|tr| tr.samples[k].state.get(j) as f64)
                        .collect();
                    let y: Vec<f64> = l.iter().map(|v| v.ln_1p() / log_n).collect();
                    NodeStats {
                        mean: mean(&l),
                        se: std_error(&l),
                        q05: quantile(&l, 0.05),
                        q50: quantile(&l, 0.5),
                        q95: quantile(&l, 0.95),
                        exponent_mean: mean(&y),
                        exponent_se: std_error(&y),
                        exponent_q05: quantile(&y, 0.05),
                        exponent_q50: quantile(&y, 0.5),
                        exponent_q95: quantile(&y, 0.95),
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|measured - predicted| <= tolerance`
    Absolute,
    /// `|measured - predicted| <= tolerance * |predicted|`
    Relative,
    /// `predicted / tolerance <= measured <= predicted * tolerance`
    Factor,
    /// `measured <= predicted + tolerance`
    AtMost,
    /// `measured >= predicted - tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionEntry {
    pub id: String,
    pub family: String,
    pub description: String,
    pub n: Option<u64>,
    pub t: Option<f64>,
    pub node: Option<usize>,
    #[serde(with = "serde_inf")]
    pub predicted: f64,
    #[serde(with = "serde_inf")]
    pub measured: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub replicas: usize,
    pub seed: u64,
}

impl CriterionEntry {
    #[allow(clippy::too_many_arguments)]
    fn new(
        family: &str,
        label: String,
        description: String,
        predicted: f64,
        measured: f64,
        tolerance: f64,
        comparison: Comparison,
        replicas: usize,
        seed: u64,
    ) -> Self {
        let pass = evaluate(comparison, predicted, measured, tolerance);
        Self {
            id: format!("{family}.{label}"),
            family: family.to_string(),
            description,
            n: None,
            t: None,
            node: None,
            predicted,
            measured,
            tolerance,
            comparison,
            pass,
            replicas,
            seed,
        }
    }

    fn at(mut self, n: u64, t: Option<f64>, node: Option<usize>) -> Self {
        self.n = Some(n);
        self.t = t;
        self.node = node;
        self
    }

    /// Size of the deviation on the comparison's own scale.
    pub fn error(&self) -> f64 {
        let (p, m) = (self.predicted, self.measured);
        match self.comparison {
            Comparison::Absolute => (m - p).abs(),
            Comparison::Relative => (m - p).abs() / p.abs(),
            Comparison::Factor => (m / p).ln().abs(),
            Comparison::AtMost => (m - p).max(0.0),
            Comparison::AtLeast => (p - m).max(0.0),
        }
    }
}

fn evaluate(comparison: Comparison, predicted: f64, measured: f64, tol: f64) -> bool {
    if measured.is_nan() || predicted.is_nan() {
        return false;
    }
    match comparison {
        Comparison::Absolute => (measured - predicted).abs() <= tol,
        Comparison::Relative => (measured - predicted).abs() <= tol * predicted.abs(),
        Comparison::Factor => measured >= predicted / tol && measured <= predicted * tol,
        Comparison::AtMost => measured <= predicted + tol,
        Comparison::AtLeast => measured >= predicted - tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub version: String,
    pub rng_algorithm: String,
    pub master_seed: u64,
    pub regime: Option<RegimeReport>,
    pub entries: Vec<CriterionEntry>,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(plan: &ExperimentPlan, regime: Option<RegimeReport>) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            master_seed: plan.master_seed,
            regime,
            entries: Vec::new(),
            pass: true,
            notes: vec![
                "tolerances are engineering defaults; no finite-N convergence rates are known"
                    .to_string(),
            ],
        }
    }

    pub fn extend(&mut self, entries: Vec<CriterionEntry>) {
        self.entries.extend(entries);
        self.pass = self.entries.iter().all(|e| e.pass);
    }

    pub fn family(&self, family: &str) -> impl Iterator<Item = &CriterionEntry> {
        let family = family.to_string();
        self.entries.iter().filter(move |e| e.family == family)
    }
}

fn fmt_t(t: f64) -> String {
    format!("{t:.4}")
}

/// Exponent-scale checks on an existing ensemble: profile values,
/// product invariance, prefactors, vanished nodes, confinement, and the
/// central node pinned at `N`.
pub fn verify_exponent_profile_on(
    plan: &ExperimentPlan,
    report: &RegimeReport,
    ens: &Ensemble,
) -> Vec<CriterionEntry> {
    let tol = &plan.tolerances;
    let n = ens.n;
    let log_n = (n as f64).ln();
    let band = tol.exponent_band(n);
    let profile = &report.profile;
    let j_max = report.j;
    let reps = ens.replicas();
    let seed = ens.seed;
    let mut out = Vec::new();

    for (k, point) in ens.stats.iter().enumerate() {
        let t = point.t;
        let scale_t = point.time;
        let tl = fmt_t(t);

        out.push(
            CriterionEntry::new(
                "center",
                format!("node0@t={tl}"),
                "mean L_0(N^t)/N stays at 1".into(),
                1.0,
                point.nodes[0].mean / n as f64,
                tol.center_band,
                Comparison::Absolute,
                reps,
                seed,
            )
            .at(n, Some(t), Some(0)),
        );

        for j in 1..=j_max {
            let node = profile.node(j);
            out.push(
                CriterionEntry::new(
                    "exponent",
                    format!("node{j}@t={tl}"),
                    format!("mean Y_{j}(N^t) vs a_{j}(t)"),
                    node.value(t),
                    point.nodes[j].exponent_mean,
                    band,
                    Comparison::Absolute,
                    reps,
                    seed,
                )
                .at(n, Some(t), Some(j)),
            );

            match node.segment(t) {
                Segment::Decreasing => {
                    let c =
                        equilibrium_product_constant(&plan.params, j).expect("node index in range");
                    let scaled =
                        mean(&ens.column(k, |s| s.get(j) as f64 * (n as f64).powf(-node.value(t))));
                    out.push(
                        CriterionEntry::new(
                            "prefactor",
                            format!("node{j}@t={tl}"),
                            format!("mean L_{j}(N^t) N^-a_{j}(t) vs product constant"),
                            c,
                            scaled,
                            tol.prefactor_factor,
                            Comparison::Factor,
                            reps,
                            seed,
                        )
                        .at(n, Some(t), Some(j)),
                    );
                    let prod = mean(
                        &ens.column(k, |s| (j..=j_max).map(|i| s.get(i) as f64).product::<f64>()),
                    );
                    out.push(
                        CriterionEntry::new(
                            "product",
                            format!("nodes{j}..{j_max}@t={tl}"),
                            format!("log(mean L_{j}...L_{j_max}(N^t))/log N vs alpha_{j}"),
                            node.alpha,
                            prod.ln() / log_n,
                            band,
                            Comparison::Absolute,
                            reps,
                            seed,
                        )
                        .at(n, Some(t), Some(j)),
                    );
                }
                Segment::Rising => {
                    let Some(ratio) = profile.rising_ratio(&plan.params, j, t) else {
                        continue;
                    };
                    let lead_decreasing =
                        (1..j).any(|i| profile.node(i).segment(t) == Segment::Decreasing);
                    // Ratios set by a decaying queue are prefactor claims; pure
                    // growth phases are drift claims.
                    if lead_decreasing {
                        out.push(
                            CriterionEntry::new(
                                "prefactor",
                                format!("node{j}@t={tl}"),
                                format!("mean L_{j}(N^t)/N^t vs mu_{j}(rho_{j} - rho_i)"),
                                ratio,
                                point.nodes[j].mean / scale_t,
                                tol.prefactor_factor,
                                Comparison::Factor,
                                reps,
                                seed,
                            )
                            .at(n, Some(t), Some(j)),
                        );
                    }
                }
                Segment::Vanished => {
                    if t < node.vanish_time + tol.window_margin {
                        continue;
                    }
                    out.push(
                        CriterionEntry::new(
                            "vanished",
                            format!("node{j}@t={tl}"),
                            format!("mean Y_{j}(N^t) after vanishing"),
                            0.0,
                            point.nodes[j].exponent_mean,
                            band,
                            Comparison::AtMost,
                            reps,
                            seed,
                        )
                        .at(n, Some(t), Some(j)),
                    );
                    let until = if j < j_max {
                        profile.node(j + 1).peak_time.min(1.0)
                    } else {
                        1.0
                    };
                    if t <= until - tol.window_margin {
                        let q = quantile(
                            &ens.column(k, |s| s.get(j) as f64),
                            tol.confinement_quantile,
                        );
                        out.push(
                            CriterionEntry::new(
                                "confinement",
                                format!("node{j}@t={tl}"),
                                format!(
                                    "{} quantile of L_{j}(N^t) vs (log N)^2",
                                    tol.confinement_quantile
                                ),
                                log_n * log_n,
                                q,
                                0.0,
                                Comparison::AtMost,
                                reps,
                                seed,
                            )
                            .at(n, Some(t), Some(j)),
                        );
                    }
                }
            }
        }
    }
    out
}

/// Rising-segment ratios `L_j(N^t)/N^t` against the growth law, for grid
/// points where every active queue is still rising.
pub fn verify_drift_on(
    plan: &ExperimentPlan,
    report: &RegimeReport,
    ens: &Ensemble,
) -> Vec<CriterionEntry> {
    let profile = &report.profile;
    let mut out = Vec::new();
    for point in &ens.stats {
        let t = point.t;
        for j in 1..=report.j {
            if (1..j).any(|i| profile.node(i).segment(t) == Segment::Decreasing) {
                continue;
            }
            let Some(ratio) = profile.rising_ratio(&plan.params, j, t) else {
                continue;
            };
            if ratio <= 0.0 {
                continue;
            }
            out.push(
                CriterionEntry::new(
                    "drift",
                    format!("node{j}@t={}", fmt_t(t)),
                    format!("mean L_{j}(N^t)/N^t vs lambda_{j} - mu_{j} kt/(1+kt)"),
                    ratio,
                    point.nodes[j].mean / point.time,
                    plan.tolerances.drift_rel_tol,
                    Comparison::Relative,
                    ens.replicas(),
                    ens.seed,
                )
                .at(ens.n, Some(t), Some(j)),
            );
        }
    }
    out
}

pub fn verify_exponent_profile(
    plan: &ExperimentPlan,
    n: u64,
) -> Result<Vec<CriterionEntry>, HarnessError> {
    plan.validate()?;
    let report = regime(&plan.params)?;
    let ens = run_scale(plan, n, TimeScale::Exponent, &plan.t_grid)?;
    Ok(verify_exponent_profile_on(plan, &report, &ens))
}

/// Fluid-scale checks: each node's mean normalised by its predicted scale.
pub fn verify_fluid_on(
    plan: &ExperimentPlan,
    report: &RegimeReport,
    ens: &Ensemble,
) -> Result<Vec<CriterionEntry>, HarnessError> {
    let tol = &plan.tolerances;
    let n = ens.n as f64;
    let mut out = Vec::new();
    for point in &ens.stats {
        let t = point.t;
        if t >= report.validity_horizon {
            continue;
        }
        for coord in fluid_from_report(report, t)? {
            let measured = point.nodes[coord.node].mean / coord.scale.evaluate(n);
            let label = format!("node{}@t={}", coord.node, fmt_t(t));
            let entry = match coord.scale {
                FluidScale::LogCubed => CriterionEntry::new(
                    "fluid",
                    label,
                    format!("mean L_{}(Nt)/(log N)^3 vanishes", coord.node),
                    0.0,
                    measured,
                    tol.fluid_rel_tol,
                    Comparison::AtMost,
                    ens.replicas(),
                    ens.seed,
                ),
                scale => {
                    let rel = if coord.node == 0 {
                        tol.center_rel_tol
                    } else {
                        tol.fluid_rel_tol
                    };
                    let scale_desc = match scale {
                        FluidScale::Power(x) => format!("N^{x:.4}"),
                        _ => "N".to_string(),
                    };
                    CriterionEntry::new(
                        "fluid",
                        label,
                        format!("mean L_{}(Nt)/{scale_desc} vs fluid limit", coord.node),
                        coord.value,
                        measured,
                        rel,
                        Comparison::Relative,
                        ens.replicas(),
                        ens.seed,
                    )
                }
            };
            out.push(entry.at(ens.n, Some(t), Some(coord.node)));
        }
    }
    Ok(out)
}

pub fn verify_fluid(plan: &ExperimentPlan, n: u64) -> Result<Vec<CriterionEntry>, HarnessError> {
    plan.validate()?;
    let report = regime(&plan.params)?;
    let ens = run_scale(plan, n, TimeScale::Fluid, &plan.fluid_t_grid)?;
    verify_fluid_on(plan, &report, &ens)
}

/// First time queue `node` hits 0 after time `after`.
#[derive(Debug, Clone)]
struct VanishObserver {
    targets: Vec<(usize, f64)>,
    hits: Vec<Option<f64>>,
}

impl PathObserver for VanishObserver {
    fn on_jump(&mut self, time: f64, t: Transition, state: &QueueState) {
        for (slot, &(node, after)) in self.targets.iter().enumerate() {
            if self.hits[slot].is_none() && t.node == node && time >= after && state.get(node) == 0
            {
                self.hits[slot] = Some(time);
            }
        }
    }

    fn on_hold(&mut self, start: f64, end: f64, state: &QueueState) {
        // A queue already empty when the window opens counts at the opening.
        for (slot, &(node, after)) in self.targets.iter().enumerate() {
            if self.hits[slot].is_none() && start <= after && after < end && state.get(node) == 0 {
                self.hits[slot] = Some(after);
            }
        }
    }

    fn finished(&self) -> bool {
        self.hits.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishStatistics {
    pub node: usize,
    /// `N^{b_j}`: hitting times are measured after this instant.
    pub after: f64,
    /// `N^{e_j} log N (1 + margin)`.
    pub bound: f64,
    #[serde(with = "serde_inf")]
    pub quantile: f64,
    /// Per replica; `inf` when zero was not reached before the horizon.
    #[serde(with = "serde_inf::vec")]
    pub hitting_times: Vec<f64>,
    pub pass: bool,
}

/// Empirical first return to zero of every queue with `e_j <= 1`, measured
/// after its peak time `N^{b_j}`.
pub fn vanish_time_statistics(
    plan: &ExperimentPlan,
    n: u64,
) -> Result<Vec<VanishStatistics>, HarnessError> {
    plan.validate()?;
    let report = regime(&plan.params)?;
    let tol = &plan.tolerances;
    let nf = n as f64;
    let targets: Vec<(usize, f64, f64)> = report
        .profile
        .nodes
        .iter()
        .filter(|p| p.vanish_time <= 1.0)
        .map(|p| {
            let bound = nf.powf(p.vanish_time) * nf.ln() * (1.0 + tol.vanish_margin);
            (p.node, nf.powf(p.peak_time), bound)
        })
        .collect();
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let horizon = targets.iter().map(|&(_, _, b)| 2.0 * b).fold(0.0, f64::max);
    let init = QueueState::loaded_center(plan.params.j(), n);
    type Hits = (Vec<Option<f64>>, bool);
    let runs: Vec<Result<Hits, SimError>> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let mut obs = VanishObserver {
                targets: targets
                    .iter()
                    .map(|&(node, after, _)| (node, after))
                    .collect(),
                hits: vec![None; targets.len()],
            };
            let cfg = SimConfig::new(plan.master_seed, horizon, Vec::new())
                .with_stream(stream(TAG_VANISH, r))
                .with_max_events(plan.max_events);
            let traj = simulate_observed(&plan.params, &init, &cfg, &mut obs)?;
            Ok((obs.hits, traj.truncated))
        })
        .collect();
    let mut per_replica = Vec::with_capacity(runs.len());
    for run in runs {
        let (hits, truncated) = run?;
        if truncated && !plan.allow_partial {
            return Err(HarnessError::Truncated {
                count: 1,
                replicas: plan.replicas,
                first: per_replica.len(),
            });
        }
        per_replica.push(hits);
    }
    Ok(targets
        .iter()
        .enumerate()
        .map(|(slot, &(node, after, bound))| {
            let hitting_times: Vec<f64> = per_replica
                .iter()
                .map(|h| h[slot].unwrap_or(f64::INFINITY))
                .collect();
            let q = quantile(&hitting_times, tol.confinement_quantile);
            VanishStatistics {
                node,
                after,
                bound,
                quantile: q,
                hitting_times,
                pass: q <= bound,
            }
        })
        .collect())
}

fn vanish_entries(
    plan: &ExperimentPlan,
    n: u64,
    stats: &[VanishStatistics],
) -> Vec<CriterionEntry> {
    stats
        .iter()
        .map(|s| {
            CriterionEntry::new(
                "vanish",
                format!("node{}", s.node),
                format!(
                    "{} quantile of first zero of L_{} after N^b vs N^e log N (1 + margin)",
                    plan.tolerances.confinement_quantile, s.node
                ),
                s.bound,
                s.quantile,
                0.0,
                Comparison::AtMost,
                s.hitting_times.len(),
                plan.master_seed,
            )
            .at(n, None, Some(s.node))
        })
        .collect()
}

#[derive(Debug, Default)]
struct RecurrenceObserver {
    half: f64,
    returns: u64,
    area_first: f64,
    area_second: f64,
}

impl PathObserver for RecurrenceObserver {
    fn on_hold(&mut self, start: f64, end: f64, state: &QueueState) {
        let total = state.total() as f64;
        let first = (end.min(self.half) - start).max(0.0);
        let second = (end - start.max(self.half)).max(0.0);
        self.area_first += total * first;
        self.area_second += total * second;
    }

    fn on_jump(&mut self, _time: f64, _t: Transition, state: &QueueState) {
        if state.is_all_zero() {
            self.returns += 1;
        }
    }
}

/// Stable networks: recurrence of the empty state and stationarity of the
/// time-average total queue. Unstable networks: linear growth of the total
/// queue length.
pub fn verify_stability(plan: &ExperimentPlan) -> Result<Vec<CriterionEntry>, HarnessError> {
    plan.validate()?;
    let tol = &plan.tolerances;
    let verdict = stability(&plan.params);
    let init = QueueState::empty(plan.params.nodes());
    let seed = plan.master_seed;
    let mut out = Vec::new();

    if verdict {
        let horizon = plan.stability_horizon;
        let reps = plan.stability_replicas.max(1);
        let runs: Vec<Result<RecurrenceObserver, SimError>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut obs = RecurrenceObserver {
                    half: horizon / 2.0,
                    ..Default::default()
                };
                let cfg = SimConfig::new(seed, horizon, Vec::new())
                    .with_stream(stream(TAG_STABLE, r))
                    .with_max_events(plan.max_events);
                let traj = simulate_observed(&plan.params, &init, &cfg, &mut obs)?;
                if traj.truncated {
                    return Err(SimError::EventBudget);
                }
                Ok(obs)
            })
            .collect();
        let runs: Vec<RecurrenceObserver> = runs.into_iter().collect::<Result<_, _>>()?;
        let min_returns = runs.iter().map(|o| o.returns).min().unwrap_or(0);
        out.push(CriterionEntry::new(
            "stability",
            "returns".into(),
            format!("fewest returns to the empty state over horizon {horizon} (stable verdict)"),
            tol.min_returns as f64,
            min_returns as f64,
            0.0,
            Comparison::AtLeast,
            reps,
            seed,
        ));
        for (r, obs) in runs.iter().enumerate() {
            let first = obs.area_first / (horizon / 2.0);
            let second = obs.area_second / (horizon / 2.0);
            out.push(CriterionEntry::new(
                "stability",
                format!("stationarity@replica={r}"),
                "time-average total queue, second half vs first half".into(),
                first,
                second,
                tol.stationarity_rel_tol,
                Comparison::Relative,
                1,
                seed,
            ));
        }
    } else {
        let horizons = &plan.growth_horizons;
        if horizons.len() < 2 {
            return Err(HarnessError::Plan("growth fit needs two horizons".into()));
        }
        let horizon = *horizons.last().expect("non-empty");
        let reps = plan.replicas;
        let slopes: Vec<Result<f64, SimError>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let cfg = SimConfig::new(seed, horizon, horizons.clone())
                    .with_stream(stream(TAG_GROWTH, r))
                    .with_max_events(plan.max_events);
                let traj = simulate(&plan.params, &init, &cfg)?;
                if traj.truncated {
                    return Err(SimError::EventBudget);
                }
                let totals: Vec<f64> = traj
                    .samples
                    .iter()
                    .map(|s| s.state.total() as f64)
                    .collect();
                Ok(ols_slope(horizons, &totals))
            })
            .collect();
        let slopes: Vec<f64> = slopes.into_iter().collect::<Result<_, _>>()?;
        let m = mean(&slopes);
        let se = std_error(&slopes);
        let z = if se > 0.0 {
            m / se
        } else if m > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let mut e = CriterionEntry::new(
            "stability",
            "unstable_growth".into(),
            format!("growth slope {m:.6} per unit time, z = slope / SE over {reps} replicas"),
            tol.growth_sigmas,
            z,
            0.0,
            Comparison::AtLeast,
            reps,
            seed,
        );
        if e.pass {
            e.description.push_str("; unstable confirmed");
        }
        out.push(e);
    }
    out.push(CriterionEntry::new(
        "stability",
        "verdict".into(),
        "verifier branch matches rho_0 + max rho_j < 1".into(),
        f64::from(u8::from(verdict)),
        f64::from(u8::from(stability(&plan.params))),
        0.0,
        Comparison::Absolute,
        0,
        seed,
    ));
    Ok(out)
}

/// Window `(b_1 + 0.02, min(e_1, 1) - 0.02)` with the plan's step.
pub fn martingale_grid(report: &RegimeReport, step: f64) -> Vec<f64> {
    let first = report.profile.node(1);
    stepped_grid(
        first.peak_time + 0.02,
        step,
        first.vanish_time.min(1.0) - 0.02,
    )
}

/// Compensated harmonic functions for every node `2..=J` along a dedicated
/// ensemble sampled on [`martingale_grid`].
pub fn verify_martingale(
    plan: &ExperimentPlan,
    n: u64,
) -> Result<Vec<CriterionEntry>, HarnessError> {
    plan.validate()?;
    let report = regime(&plan.params)?;
    if report.j < 2 {
        return Ok(Vec::new());
    }
    let grid = martingale_grid(&report, plan.martingale_step);
    if grid.len() < 2 {
        return Ok(Vec::new());
    }
    let times = power_grid(n, &grid);
    let horizon = *times.last().expect("non-empty");
    let init = QueueState::loaded_center(report.j, n);
    let trajs: Vec<Trajectory> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig::new(plan.master_seed, horizon, times.clone())
                .with_stream(stream(TAG_MARTINGALE, r))
                .with_max_events(plan.max_events);
            simulate(&plan.params, &init, &cfg)
        })
        .collect::<Result<_, _>>()?;
    let tol = &plan.tolerances;
    let mut out = Vec::new();
    for node in 2..=report.j {
        let d = harmonic_residual(&plan.params, &trajs, n, &grid, node)?;
        out.push(
            CriterionEntry::new(
                "martingale",
                format!("node{node}"),
                format!(
                    "fraction of grid points with |mean M| <= {} SE",
                    tol.martingale_bands
                ),
                tol.martingale_coverage,
                d.coverage(tol.martingale_bands),
                0.0,
                Comparison::AtLeast,
                d.replicas,
                plan.master_seed,
            )
            .at(n, None, Some(node)),
        );
    }
    Ok(out)
}

/// Runs every enabled check for every `N` of the plan.
pub fn verify(plan: &ExperimentPlan) -> Result<VerificationReport, HarnessError> {
    plan.validate()?;
    let regime_report = match regime(&plan.params) {
        Ok(r) => Some(r),
        Err(TheoryError::Model(_)) | Err(TheoryError::LoadDomain(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut report = VerificationReport::new(plan, regime_report.clone());
    let needs_regime = [
        Check::Exponent,
        Check::Drift,
        Check::Vanish,
        Check::Fluid,
        Check::Martingale,
    ];
    if regime_report.is_none() && needs_regime.iter().any(|&c| plan.enabled(c)) {
        report
            .notes
            .push("regime assumptions fail; only the stability check applies".into());
    }
    if let Some(r) = &regime_report {
        for &n in &plan.n_values {
            if plan.enabled(Check::Exponent) || plan.enabled(Check::Drift) {
                let ens = run_scale(plan, n, TimeScale::Exponent, &plan.t_grid)?;
                if plan.enabled(Check::Exponent) {
                    report.extend(verify_exponent_profile_on(plan, r, &ens));
                }
                if plan.enabled(Check::Drift) {
                    report.extend(verify_drift_on(plan, r, &ens));
                }
            }
            if plan.enabled(Check::Vanish) {
                let stats = vanish_time_statistics(plan, n)?;
                report.extend(vanish_entries(plan, n, &stats));
            }
            if plan.enabled(Check::Fluid) && !plan.fluid_t_grid.is_empty() {
                let ens = run_scale(plan, n, TimeScale::Fluid, &plan.fluid_t_grid)?;
                report.extend(verify_fluid_on(plan, r, &ens)?);
            }
            if plan.enabled(Check::Martingale) {
                report.extend(verify_martingale(plan, n)?);
            }
        }
    }
    if plan.enabled(Check::Stability) {
        report.extend(verify_stability(plan)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u64,
    /// Largest deviation per check family at this `N`.
    pub errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub inversions: usize,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub verdicts: BTreeMap<String, Monotonicity>,
}

impl SweepTable {
    pub fn monotone(&self) -> bool {
        self.verdicts.values().all(|v| v.monotone)
    }

    pub fn series(&self, family: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.errors.get(family).copied().unwrap_or(f64::NAN))
            .collect()
    }
}

/// Count of strict increases in a sequence that should be non-increasing.
pub fn inversions(errors: &[f64]) -> usize {
    errors.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Reruns the exponent-profile and fluid checks at every `N` and reports
/// how each family's worst error evolves.
pub fn convergence_sweep(plan: &ExperimentPlan) -> Result<SweepTable, HarnessError> {
    plan.validate()?;
    let mut ns = plan.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(HarnessError::Plan(
            "a sweep needs at least three values of N".into(),
        ));
    }
    if (ns[ns.len() - 1] as f64) < 100.0 * ns[0] as f64 {
        return Err(HarnessError::Plan(
            "a sweep must span at least two decades of N".into(),
        ));
    }
    let report = regime(&plan.params)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let ens = run_scale(plan, n, TimeScale::Exponent, &plan.t_grid)?;
        let mut entries = verify_exponent_profile_on(plan, &report, &ens);
        if plan.enabled(Check::Fluid) && !plan.fluid_t_grid.is_empty() {
            let ens = run_scale(plan, n, TimeScale::Fluid, &plan.fluid_t_grid)?;
            entries.extend(verify_fluid_on(plan, &report, &ens)?);
        }
        let mut errors: BTreeMap<String, f64> = BTreeMap::new();
        for e in &entries {
            let slot = errors.entry(e.family.clone()).or_insert(0.0);
            *slot = slot.max(e.error());
        }
        rows.push(SweepRow { n, errors });
    }
    let families: Vec<String> = rows
        .iter()
        .flat_map(|r| r.errors.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut table = SweepTable {
        rows,
        verdicts: BTreeMap::new(),
    };
    for f in families {
        let inv = inversions(&table.series(&f));
        table.verdicts.insert(
            f,
            Monotonicity {
                inversions: inv,
                monotone: inv <= 1,
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical_plan(n: u64, replicas: usize) -> ExperimentPlan {
        let p = NetworkParams::from_loads(&[0.3, 0.2, 0.4]).unwrap();
        ExperimentPlan::new(p, vec![n], replicas, 7)
    }

    #[test]
    fn default_grids() {
        let plan = canonical_plan(1000, 2);
        assert_eq!(plan.t_grid.len(), 49);
        assert_eq!(plan.t_grid[0], 0.02);
        assert_eq!(*plan.t_grid.last().unwrap(), 0.98);
        // t_0 = 10/3, so the fluid grid stops at 2.
        assert_eq!(plan.fluid_t_grid.len(), 20);
        assert_eq!(*plan.fluid_t_grid.last().unwrap(), 2.0);
        let p = NetworkParams::from_loads(&[0.2, 0.7, 0.8]).unwrap();
        // Case 1: t_0 = 3 / (1 - 0.6) = 7.5.
        assert_eq!(default_fluid_grid(&p).len(), 20);
        let p = NetworkParams::from_loads(&[0.3, 0.7, 0.8]).unwrap();
        // t_0 = 3 / (1 - 0.9) = 30 ... still capped at 2.
        assert_eq!(default_fluid_grid(&p).len(), 20);
        let p = NetworkParams::from_loads(&[0.6, 0.1, 0.2]).unwrap();
        // Case 3: t_0 = 1 / (1 - 0.8) = 5.
        assert_eq!(default_fluid_grid(&p).len(), 20);
    }

    #[test]
    fn comparisons() {
        assert!(evaluate(Comparison::Absolute, 1.0, 1.05, 0.1));
        assert!(!evaluate(Comparison::Relative, 1.0, 1.2, 0.1));
        assert!(evaluate(Comparison::Factor, 0.2, 0.39, 2.0));
        assert!(!evaluate(Comparison::Factor, 0.2, 0.09, 2.0));
        assert!(evaluate(Comparison::AtMost, 5.0, 5.0, 0.0));
        assert!(!evaluate(Comparison::AtLeast, 100.0, 99.0, 0.0));
        assert!(!evaluate(Comparison::Absolute, 1.0, f64::NAN, 10.0));
    }

    #[test]
    fn plan_validation() {
        let mut plan = canonical_plan(1000, 1);
        assert!(matches!(plan.validate(), Err(HarnessError::Plan(_))));
        plan.replicas = 2;
        plan.t_grid = vec![0.2, 0.1];
        assert!(matches!(plan.validate(), Err(HarnessError::Plan(_))));
        plan.t_grid = vec![0.5, 1.0];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn ensembles_are_deterministic() {
        let mut plan = canonical_plan(1000, 2);
        plan.t_grid = vec![0.2, 0.5, 0.9];
        let a = run_ensemble(&plan, 1000).unwrap();
        let b = run_ensemble(&plan, 1000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.exponent.replicas(), 2);
        assert!(a.fluid.is_some());
    }

    #[test]
    fn truncation_fails_unless_partial() {
        let mut plan = canonical_plan(1000, 2);
        plan.t_grid = vec![0.9];
        plan.max_events = 10;
        plan.checks = vec![Check::Exponent];
        assert!(matches!(
            run_ensemble(&plan, 1000),
            Err(HarnessError::Truncated { count: 2, .. })
        ));
    }

    #[test]
    fn sweep_rejects_short_plans() {
        let mut plan = canonical_plan(1000, 2);
        plan.n_values = vec![1000];
        assert!(matches!(
            convergence_sweep(&plan),
            Err(HarnessError::Plan(_))
        ));
        plan.n_values = vec![1000, 2000, 5000];
        assert!(matches!(
            convergence_sweep(&plan),
            Err(HarnessError::Plan(_))
        ));
    }

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
        assert_eq!(inversions(&[3.0, 3.5, 1.0, 0.5]), 1);
        assert_eq!(inversions(&[1.0, 2.0, 3.0]), 2);
    }

    #[test]
    fn martingale_window_for_canonical_parameters() {
        let r = regime(&canonical_plan(10, 2).params).unwrap();
        let g = martingale_grid(&r, 0.01);
        assert!((g[0] - 0.145).abs() < 1e-12);
        assert!(*g.last().unwrap() <= 0.23 + 1e-12);
        assert_eq!(g.len(), 9);
    }

    #[test]
    fn vanish_observer_counts_queue_already_empty() {
        let mut obs = VanishObserver {
            targets: vec![(1, 5.0)],
            hits: vec![None],
        };
        obs.on_hold(4.0, 6.0, &QueueState::new(vec![3, 0, 2]));
        assert_eq!(obs.hits[0], Some(5.0));
        assert!(obs.finished());
    }
}

//! Reference processes and diagnostics that do not go through the star
//! network simulator: birth-death supremum bounds, an independent
//! birth-death simulator, and the compensated space-time harmonic functions
//! used as a martingale check on simulated ensembles.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NetworkParams;
use crate::sim::{power_grid, replica_rng, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("bound requires 0 < lambda < mu, got lambda = {lambda}, mu = {mu}")]
    Subcritical { lambda: f64, mu: f64 },
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("initial value {init} lies below the reflecting level {level}")]
    InitBelowReflection { init: i64, level: i64 },
    #[error("initial value {init} lies below the absorbing level {level}")]
    InitBelowAbsorption { init: i64, level: i64 },
    #[error("an unbounded horizon needs an absorbing level and death > birth")]
    UnboundedRun,
    #[error("rates must be finite with death > 0 and birth >= 0")]
    Rates,
    #[error("harmonic residual needs node in 2..={j}, got {node}")]
    Node { node: usize, j: usize },
    #[error("trajectory {replica}: {reason}")]
    Grid { replica: usize, reason: String },
    #[error("need at least one trajectory and two grid points")]
    Empty,
}

fn check_subcritical(lambda: f64, mu: f64) -> Result<(), OracleError> {
    if lambda > 0.0 && mu > lambda && mu.is_finite() {
        Ok(())
    } else {
        Err(OracleError::Subcritical { lambda, mu })
    }
}

/// `(lambda / mu)^x`.
pub fn kingman_bound(lambda: f64, mu: f64, x: u32) -> Result<f64, OracleError> {
    check_subcritical(lambda, mu)?;
    Ok((lambda / mu).powi(x as i32))
}

/// `min(1, (lambda T + 1) (lambda / mu)^x)`, the bound on the supremum of the
/// reflected process over `[0, T]`.
pub fn reflected_sup_bound(lambda: f64, mu: f64, horizon: f64, x: u32) -> Result<f64, OracleError> {
    check_subcritical(lambda, mu)?;
    if !(horizon > 0.0) {
        return Err(OracleError::Horizon(horizon));
    }
    Ok(((lambda * horizon + 1.0) * (lambda / mu).powi(x as i32)).min(1.0))
}

/// `P(sup >= x)` for a birth-death walk started at 1 and killed at 0
/// (gambler's ruin). Used as the exact reference for excursion heights.
pub fn excursion_height_probability(lambda: f64, mu: f64, x: u32) -> Result<f64, OracleError> {
    check_subcritical(lambda, mu)?;
    if x <= 1 {
        return Ok(1.0);
    }
    let r = mu / lambda;
    Ok((r - 1.0) / (r.powi(x as i32) - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathSpec {
    pub birth: f64,
    pub death: f64,
    pub init: i64,
    /// Deaths are disabled at this level.
    pub reflect_at: Option<i64>,
    /// The run stops when this level is hit.
    pub absorb_at: Option<i64>,
}

impl BirthDeathSpec {
    pub fn free(birth: f64, death: f64, init: i64) -> Self {
        Self {
            birth,
            death,
            init,
            reflect_at: None,
            absorb_at: None,
        }
    }

    pub fn reflected(birth: f64, death: f64, init: i64, level: i64) -> Self {
        Self {
            reflect_at: Some(level),
            ..Self::free(birth, death, init)
        }
    }

    pub fn absorbed(birth: f64, death: f64, init: i64, level: i64) -> Self {
        Self {
            absorb_at: Some(level),
            ..Self::free(birth, death, init)
        }
    }

    fn validate(&self, horizon: f64) -> Result<(), OracleError> {
        if !(self.birth >= 0.0
            && self.birth.is_finite()
            && self.death > 0.0
            && self.death.is_finite())
        {
            return Err(OracleError::Rates);
        }
        if let Some(level) = self.reflect_at {
            if self.init < level {
                return Err(OracleError::InitBelowReflection {
                    init: self.init,
                    level,
                });
            }
        }
        if let Some(level) = self.absorb_at {
            if self.init < level {
                return Err(OracleError::InitBelowAbsorption {
                    init: self.init,
                    level,
                });
            }
        }
        if horizon.is_infinite() {
            if self.absorb_at.is_none() || self.death <= self.birth {
                return Err(OracleError::UnboundedRun);
            }
        } else if !(horizon > 0.0) {
            return Err(OracleError::Horizon(horizon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathSummary {
    pub sup: i64,
    pub final_value: i64,
    pub end_time: f64,
    /// First time the reflecting (or absorbing) level is reached, if ever.
    pub first_floor_hit: Option<f64>,
    /// First time each level `init + 1, init + 2, ..., sup` was reached.
    pub record_times: Vec<f64>,
    /// Time spent at the reflecting level (0 without reflection).
    pub time_at_floor: f64,
    pub time_average: f64,
    pub absorbed: bool,
    pub events: u64,
}

/// Exact simulation of a birth-death process on the integers over
/// `[0, horizon]`, or until absorption when `horizon` is infinite.
pub fn simulate_birth_death(
    spec: &BirthDeathSpec,
    horizon: f64,
    seed: u64,
) -> Result<BirthDeathSummary, OracleError> {
    spec.validate(horizon)?;
    let mut rng = replica_rng(seed, 0);
    Ok(run_birth_death(spec, horizon, &mut rng))
}

fn run_birth_death(
    spec: &BirthDeathSpec,
    horizon: f64,
    rng: &mut crate::sim::SimRng,
) -> BirthDeathSummary {
    let floor = spec.reflect_at.or(spec.absorb_at);
    let mut x = spec.init;
    let mut now = 0.0;
    let mut sup = x;
    let mut record_times = Vec::new();
    let mut first_floor_hit = (floor == Some(x)).then_some(0.0);
    let mut time_at_floor = 0.0;
    let mut area = 0.0;
    let mut events = 0u64;
    let mut absorbed = spec.absorb_at == Some(x);

    while !absorbed {
        let death = if spec.reflect_at == Some(x) {
            0.0
        } else {
            spec.death
        };
        let total = spec.birth + death;
        if total == 0.0 {
            break;
        }
        let e: f64 = rng.sample(Exp1);
        let next = now + e / total;
        let end = next.min(horizon);
        area += x as f64 * (end - now);
        if spec.reflect_at == Some(x) {
            time_at_floor += end - now;
        }
        if next > horizon {
            now = horizon;
            break;
        }
        now = next;
        events += 1;
        if rng.random::<f64>() * total < spec.birth {
            x += 1;
            if x > sup {
                sup = x;
                record_times.push(now);
            }
        } else {
            x -= 1;
        }
        if first_floor_hit.is_none() && floor == Some(x) {
            first_floor_hit = Some(now);
        }
        absorbed = spec.absorb_at == Some(x);
    }
    if !absorbed && horizon.is_finite() {
        now = horizon;
    }
    BirthDeathSummary {
        sup,
        final_value: x,
        end_time: now,
        first_floor_hit,
        record_times,
        time_at_floor,
        time_average: if now > 0.0 { area / now } else { x as f64 },
        absorbed,
        events,
    }
}

/// `count` independent absorbed excursions; replica `i` uses stream `i`.
pub fn excursion_suprema(
    spec: &BirthDeathSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<i64>, OracleError> {
    spec.validate(f64::INFINITY)?;
    Ok((0..count as u64)
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            run_birth_death(spec, f64::INFINITY, &mut rng).sup
        })
        .collect())
}

/// Cross-replica mean of the compensated harmonic function on a grid of
/// exponent times, with standard-error half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiagnostic {
    pub node: usize,
    pub times: Vec<f64>,
    pub residual: Vec<f64>,
    pub band: Vec<f64>,
    pub replicas: usize,
}

impl MartingaleDiagnostic {
    /// Fraction of grid points with `|residual| <= width * band`.
    pub fn coverage(&self, width: f64) -> f64 {
        let hits = self
            .residual
            .iter()
            .zip(&self.band)
            .filter(|(r, b)| r.abs() <= width * **b)
            .count();
        hits as f64 / self.times.len() as f64
    }
}

/// `F_j(l, t) = 1/2 (l_j/N^t - c)^2 - (mu_j/mu_1) (l_1/N^t) (l_j/N^t - c)`
/// with `c = mu_j (rho_j - rho_1)`.
pub fn harmonic_function(params: &NetworkParams, node: usize, l1: u64, lj: u64, scale: f64) -> f64 {
    let c = target_ratio(params, node);
    let dev = lj as f64 / scale - c;
    0.5 * dev * dev - params.mu()[node] / params.mu()[1] * (l1 as f64 / scale) * dev
}

fn target_ratio(params: &NetworkParams, node: usize) -> f64 {
    params.mu()[node] * (params.rho(node) - params.rho(1))
}

/// Compensated process
/// `M(t) = F_j(t) - F_j(t_0) + log N * int_{t_0}^t (L_j(N^u)/N^u - c)^2 du`
/// along each trajectory, integral by the trapezoid rule on `t_grid`. The
/// bounded remainder terms of the generator are not included.
pub fn harmonic_residual(
    params: &NetworkParams,
    trajectories: &[Trajectory],
    n: u64,
    t_grid: &[f64],
    node: usize,
) -> Result<MartingaleDiagnostic, OracleError> {
    if node < 2 || node > params.j() {
        return Err(OracleError::Node {
            node,
            j: params.j(),
        });
    }
    if trajectories.is_empty() || t_grid.len() < 2 {
        return Err(OracleError::Empty);
    }
    let log_n = (n as f64).ln();
    let scales = power_grid(n, t_grid);
    let c = target_ratio(params, node);

    let mut paths = Vec::with_capacity(trajectories.len());
    for (replica, traj) in trajectories.iter().enumerate() {
        if traj.samples.len() != t_grid.len() {
            return Err(OracleError::Grid {
                replica,
                reason: format!(
                    "{} samples for {} grid points",
                    traj.samples.len(),
                    t_grid.len()
                ),
            });
        }
        for (k, (sample, &want)) in traj.samples.iter().zip(&scales).enumerate() {
            if (sample.time - want).abs() > 1e-9 * want.max(1.0) {
                return Err(OracleError::Grid {
                    replica,
                    reason: format!("sample {k} at {} instead of {want}", sample.time),
                });
            }
        }
        let f: Vec<f64> = traj
            .samples
            .iter()
            .zip(&scales)
            .map(|(s, &sc)| harmonic_function(params, node, s.state.get(1), s.state.get(node), sc))
            .collect();
        let g: Vec<f64> = traj
            .samples
            .iter()
            .zip(&scales)
            .map(|(s, &sc)| {
                let d = s.state.get(node) as f64 / sc - c;
                log_n * d * d
            })
            .collect();
        let mut m = Vec::with_capacity(t_grid.len());
        let mut integral = 0.0;
        m.push(0.0);
        for k in 1..t_grid.len() {
            integral += 0.5 * (g[k - 1] + g[k]) * (t_grid[k] - t_grid[k - 1]);
            m.push(f[k] - f[0] + integral);
        }
        paths.push(m);
    }

    let r = paths.len() as f64;
    let mut residual = Vec::with_capacity(t_grid.len());
    let mut band = Vec::with_capacity(t_grid.len());
    for k in 0..t_grid.len() {
        let mean = paths.iter().map(|p| p[k]).sum::<f64>() / r;
        let se = if paths.len() > 1 {
            let var = paths.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        residual.push(mean);
        band.push(se);
    }
    Ok(MartingaleDiagnostic {
        node,
        times: t_grid.to_vec(),
        residual,
        band,
        replicas: paths.len(),
    })
}

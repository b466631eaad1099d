//! Exact jump-chain simulation of the star network.
//!
//! Each step draws an exponential holding time at the total rate `R` and a
//! transition with probability `rate / R`. Sample times are served by
//! fast-forwarding: a sample at time `s` records the state right after the
//! last event at or before `s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    capacity_share, check_state, log1p_count, validate_params, ModelError, NetworkParams,
    QueueState, Transition,
};

/// Generator used for every simulated path.
pub type SimRng = ChaCha8Rng;

/// Identifier of [`SimRng`] recorded in trajectories and reports.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64+stream";

pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

/// Generator for replica `stream` of an ensemble with master seed `seed`.
///
/// The key is `seed_from_u64(seed)`; the replica index selects the ChaCha
/// stream, so replicas are independent and can run in any order.
pub fn replica_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be finite and non-negative, got {0}")]
    Horizon(f64),
    #[error("max_events must be positive")]
    EventBudget,
    #[error("sample times must be strictly increasing within [0, horizon]; offending index {0}")]
    SampleTimes(usize),
    #[error("trajectory has {found} samples, grid has {expected} points")]
    GridLength { expected: usize, found: usize },
    #[error("sample {index} was taken at {found}, expected N^t = {expected}")]
    GridMismatch {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error("scaling parameter N must be at least 2")]
    ScalingParameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Replica index within an ensemble; 0 for standalone runs.
    pub stream: u64,
    pub horizon: f64,
    pub max_events: u64,
    pub sample_times: Vec<f64>,
}

impl SimConfig {
    pub fn new(seed: u64, horizon: f64, sample_times: Vec<f64>) -> Self {
        Self {
            seed,
            stream: 0,
            horizon,
            max_events: DEFAULT_MAX_EVENTS,
            sample_times,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_max_events(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(SimError::Horizon(self.horizon));
        }
        if self.max_events == 0 {
            return Err(SimError::EventBudget);
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, &s) in self.sample_times.iter().enumerate() {
            if !(s >= 0.0 && s <= self.horizon && s > prev) {
                return Err(SimError::SampleTimes(i));
            }
            prev = s;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub state: QueueState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params_snapshot: NetworkParams,
    pub initial: QueueState,
    pub samples: Vec<Sample>,
    pub events_used: u64,
    pub truncated: bool,
    /// Time of the last simulated event or the horizon, whichever came first.
    pub end_time: f64,
    pub seed: u64,
    pub stream: u64,
    pub rng_algorithm: String,
    /// Scaling parameter `N` when the run belongs to a scaling experiment.
    pub scale: Option<u64>,
}

/// Callbacks along a simulated path.
pub trait PathObserver {
    /// The path sits in `state` during `[start, end)`.
    fn on_hold(&mut self, _start: f64, _end: f64, _state: &QueueState) {}
    /// `transition` fired at `time`; `state` already includes it.
    fn on_jump(&mut self, _time: f64, _transition: Transition, _state: &QueueState) {}
    /// Ends the run after the current event. The path is not flagged as
    /// truncated; remaining sample times are left unserved.
    fn finished(&self) -> bool {
        false
    }
}

impl PathObserver for () {}

/// One draw of the jump chain: the holding time and the transition taken.
pub fn step(
    rng: &mut SimRng,
    params: &NetworkParams,
    state: &QueueState,
) -> Option<(f64, Transition)> {
    draw(rng, params, state.counts(), capacity_share(state))
}

/// Rates are enumerated in the same order as
/// [`transition_rates`](crate::model::transition_rates). Returns `None` when
/// no transition is enabled.
fn draw(
    rng: &mut SimRng,
    params: &NetworkParams,
    counts: &[u64],
    w: f64,
) -> Option<(f64, Transition)> {
    let lambda = params.lambda();
    let mu = params.mu();
    let dep_rate = |node: usize| -> f64 {
        if counts[node] == 0 {
            0.0
        } else if node == 0 {
            mu[0] * (1.0 - w)
        } else {
            mu[node] * w
        }
    };
    let total: f64 = lambda.iter().sum::<f64>() + (0..counts.len()).map(dep_rate).sum::<f64>();
    if total <= 0.0 {
        return None;
    }
    let e: f64 = rng.sample(Exp1);
    let dwell = e / total;
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (node, &rate) in lambda.iter().enumerate() {
        if rate > 0.0 {
            last = Some(Transition::arrival(node));
            if u < rate {
                return Some((dwell, Transition::arrival(node)));
            }
            u -= rate;
        }
    }
    for node in 0..counts.len() {
        let rate = dep_rate(node);
        if rate > 0.0 {
            last = Some(Transition::departure(node));
            if u < rate {
                return Some((dwell, Transition::departure(node)));
            }
            u -= rate;
        }
    }
    // Rounding left `u` marginally above the last cumulative rate.
    last.map(|t| (dwell, t))
}

/// Runs the jump chain from `init` until `config.horizon` or until the event
/// budget is exhausted.
pub fn simulate(
    params: &NetworkParams,
    init: &QueueState,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate_observed(params, init, config, &mut ())
}

pub fn simulate_observed<O: PathObserver + ?Sized>(
    params: &NetworkParams,
    init: &QueueState,
    config: &SimConfig,
    observer: &mut O,
) -> Result<Trajectory, SimError> {
    check_inputs(params, init)?;
    config.validate()?;

    let mut rng = replica_rng(config.seed, config.stream);
    let mut state = init.clone();
    let mut logs: Vec<f64> = state.counts().iter().map(|&l| log1p_count(l)).collect();
    let mut samples = Vec::with_capacity(config.sample_times.len());
    let mut pending = config.sample_times.iter().copied().peekable();
    let mut now = 0.0;
    let mut events = 0u64;
    let mut truncated = false;
    let mut stopped = false;

    loop {
        let w = share_from_logs(&logs);
        let next = draw(&mut rng, params, state.counts(), w);
        let t_next = match next {
            Some((dwell, _)) => now + dwell,
            None => f64::INFINITY,
        };
        if events == config.max_events && t_next <= config.horizon {
            truncated = true;
            break;
        }
        let hold_end = t_next.min(config.horizon);
        while let Some(&s) = pending.peek() {
            if s < t_next && s <= config.horizon {
                samples.push(Sample {
                    time: s,
                    state: state.clone(),
                });
                pending.next();
            } else {
                break;
            }
        }
        if hold_end > now {
            observer.on_hold(now, hold_end, &state);
        }
        let Some((_, transition)) = next else { break };
        if t_next > config.horizon {
            break;
        }
        state.bump(transition);
        logs[transition.node] = log1p_count(state.get(transition.node));
        events += 1;
        now = t_next;
        observer.on_jump(now, transition, &state);
        // Samples falling exactly on this event time include its effect.
        while let Some(&s) = pending.peek() {
            if s == now {
                samples.push(Sample {
                    time: s,
                    state: state.clone(),
                });
                pending.next();
            } else {
                break;
            }
        }
        if observer.finished() {
            stopped = true;
            break;
        }
    }
    let end_time = if truncated || stopped {
        now
    } else {
        config.horizon
    };

    Ok(Trajectory {
        params_snapshot: params.clone(),
        initial: init.clone(),
        samples,
        events_used: events,
        truncated,
        end_time,
        seed: config.seed,
        stream: config.stream,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        scale: None,
    })
}

fn share_from_logs(logs: &[f64]) -> f64 {
    let num: f64 = logs[1..].iter().sum();
    let den = num + logs[0];
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check_inputs(params: &NetworkParams, init: &QueueState) -> Result<(), SimError> {
    // Zero arrival rates are allowed for single-queue reductions, so only
    // the shape and the service rates are checked here.
    if params.j() == 0 {
        return Err(ModelError::NoPeripheralNodes.into());
    }
    let nodes = params.nodes();
    for (field, v) in [("lambda", params.lambda()), ("mu", params.mu())] {
        if v.len() != nodes {
            return Err(ModelError::Arity {
                field,
                expected: nodes,
                found: v.len(),
            }
            .into());
        }
    }
    if let Some((index, &value)) = params
        .lambda()
        .iter()
        .enumerate()
        .find(|(_, &x)| !(x.is_finite() && x >= 0.0))
    {
        return Err(ModelError::NonPositiveRate {
            field: "lambda",
            index,
            value,
        }
        .into());
    }
    if params.mu().iter().any(|&m| !(m.is_finite() && m > 0.0)) {
        // Reuse the full validator for a precise error.
        validate_params(params, false)?;
    }
    check_state(params, init)?;
    Ok(())
}

/// Physical sample times `N^t` for a grid on the exponent scale.
pub fn power_grid(n: u64, t_grid: &[f64]) -> Vec<f64> {
    let n = n as f64;
    t_grid.iter().map(|&t| n.powf(t)).collect()
}

/// `Y_j = log(1 + L_j(N^t)) / log N` for every grid point (rows) and node
/// (columns).
pub fn exponent_samples(
    traj: &Trajectory,
    n: u64,
    t_grid: &[f64],
) -> Result<Vec<Vec<f64>>, SimError> {
    if n < 2 {
        return Err(SimError::ScalingParameter);
    }
    if traj.samples.len() != t_grid.len() {
        return Err(SimError::GridLength {
            expected: t_grid.len(),
            found: traj.samples.len(),
        });
    }
    let log_n = (n as f64).ln();
    let expected = power_grid(n, t_grid);
    traj.samples
        .iter()
        .zip(expected)
        .enumerate()
        .map(|(index, (sample, want))| {
            if (sample.time - want).abs() > 1e-9 * want.max(1.0) {
                return Err(SimError::GridMismatch {
                    index,
                    expected: want,
                    found: sample.time,
                });
            }
            Ok(sample
                .state
                .counts()
                .iter()
                .map(|&l| log1p_count(l) / log_n)
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Delta;

    fn star2() -> NetworkParams {
        NetworkParams::new(2, vec![0.3, 0.2, 0.4], vec![1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn step_is_deterministic() {
        let p = star2();
        let s = QueueState::new(vec![1, 1, 1]);
        let a = step(&mut replica_rng(42, 0), &p, &s);
        let b = step(&mut replica_rng(42, 0), &p, &s);
        assert_eq!(a, b);
        let c = step(&mut replica_rng(42, 1), &p, &s);
        assert_ne!(a, c);
    }

    #[test]
    fn arrival_frequencies_from_empty_state() {
        // Multinomial frequencies vs lambda_j / sum(lambda), 3 standard errors.
        let p = star2();
        let s = QueueState::empty(3);
        let mut rng = replica_rng(7, 0);
        let trials = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let (_, t) = step(&mut rng, &p, &s).unwrap();
            assert_eq!(t.delta, Delta::Arrival);
            counts[t.node] += 1;
        }
        for (node, &c) in counts.iter().enumerate() {
            let prob = p.lambda()[node] / 0.9;
            let se = (prob * (1.0 - prob) / trials as f64).sqrt();
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - prob).abs() <= 3.0 * se,
                "node {node}: {freq} vs {prob}"
            );
        }
    }

    #[test]
    fn mean_dwell_is_inverse_total_rate() {
        let p = star2();
        let s = QueueState::new(vec![1, 1, 1]);
        let total = 0.9 + 1.0 / 3.0 + 2.0 / 3.0 + 2.0 / 3.0;
        let mut rng = replica_rng(11, 0);
        let trials = 100_000;
        let mean: f64 = (0..trials)
            .map(|_| step(&mut rng, &p, &s).unwrap().0)
            .sum::<f64>()
            / trials as f64;
        assert!((mean * total - 1.0).abs() < 0.02, "mean dwell {mean}");
    }

    #[test]
    fn zero_horizon() {
        let p = star2();
        let init = QueueState::new(vec![3, 1, 4]);
        let t = simulate(&p, &init, &SimConfig::new(1, 0.0, vec![0.0])).unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.samples[0].state, init);
        let t = simulate(&p, &init, &SimConfig::new(1, 0.0, vec![])).unwrap();
        assert!(t.samples.is_empty());
        assert_eq!(t.events_used, 0);
    }

    #[test]
    fn simulate_is_bit_identical_for_equal_inputs() {
        let p = star2();
        let init = QueueState::loaded_center(2, 50);
        let cfg = SimConfig::new(99, 200.0, vec![1.0, 10.0, 100.0, 200.0]);
        let a = simulate(&p, &init, &cfg).unwrap();
        let b = simulate(&p, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 4);
        for (s, want) in a.samples.iter().zip(&cfg.sample_times) {
            assert_eq!(s.time, *want);
        }
    }

    struct Recorder {
        jumps: Vec<(f64, QueueState)>,
        held: f64,
    }

    impl PathObserver for Recorder {
        fn on_hold(&mut self, start: f64, end: f64, _state: &QueueState) {
            self.held += end - start;
        }
        fn on_jump(&mut self, time: f64, _t: Transition, state: &QueueState) {
            self.jumps.push((time, state.clone()));
        }
    }

    #[test]
    fn sample_at_event_time_includes_event() {
        let p = star2();
        let init = QueueState::empty(3);
        let mut rec = Recorder {
            jumps: vec![],
            held: 0.0,
        };
        let probe =
            simulate_observed(&p, &init, &SimConfig::new(5, 50.0, vec![]), &mut rec).unwrap();
        assert!((rec.held - 50.0).abs() < 1e-9);
        assert_eq!(probe.events_used as usize, rec.jumps.len());
        let picks: Vec<(f64, QueueState)> = rec.jumps.iter().step_by(7).take(5).cloned().collect();
        let times: Vec<f64> = picks.iter().map(|(t, _)| *t).collect();
        let traj = simulate(&p, &init, &SimConfig::new(5, 50.0, times)).unwrap();
        for (sample, (_, state)) in traj.samples.iter().zip(&picks) {
            assert_eq!(&sample.state, state);
        }
    }

    #[test]
    fn truncation_is_flagged() {
        let p = star2();
        let init = QueueState::empty(3);
        let cfg = SimConfig::new(3, 1e6, vec![1e5, 9e5]).with_max_events(100);
        let t = simulate(&p, &init, &cfg).unwrap();
        assert!(t.truncated);
        assert_eq!(t.events_used, 100);
        assert!(t.samples.is_empty());
    }

    #[test]
    fn rejects_bad_sample_times() {
        let p = star2();
        let init = QueueState::empty(3);
        let err = simulate(&p, &init, &SimConfig::new(1, 10.0, vec![1.0, 1.0])).unwrap_err();
        assert_eq!(err, SimError::SampleTimes(1));
        let err = simulate(&p, &init, &SimConfig::new(1, 10.0, vec![11.0])).unwrap_err();
        assert_eq!(err, SimError::SampleTimes(0));
        let err =
            simulate(&p, &QueueState::empty(2), &SimConfig::new(1, 10.0, vec![])).unwrap_err();
        assert!(matches!(
            err,
            SimError::Model(ModelError::StateArity { .. })
        ));
    }

    #[test]
    fn exponent_samples_arithmetic() {
        let p = star2();
        let mk = |counts: Vec<u64>, n: u64, t: f64| Trajectory {
            params_snapshot: p.clone(),
            initial: QueueState::empty(3),
            samples: vec![Sample {
                time: (n as f64).powf(t),
                state: QueueState::new(counts),
            }],
            events_used: 0,
            truncated: false,
            end_time: 0.0,
            seed: 0,
            stream: 0,
            rng_algorithm: RNG_ALGORITHM.into(),
            scale: Some(n),
        };
        let y = exponent_samples(&mk(vec![0, 9_999, 0], 10_000, 0.5), 10_000, &[0.5]).unwrap();
        assert_eq!(y[0][0], 0.0);
        assert!((y[0][1] - 1.0).abs() < 1e-15);
        let y = exponent_samples(&mk(vec![999, 0, 0], 1_000_000, 0.3), 1_000_000, &[0.3]).unwrap();
        assert!((y[0][0] - 0.5).abs() < 1e-15);
        let err = exponent_samples(&mk(vec![1, 0, 0], 100, 0.3), 100, &[0.4]).unwrap_err();
        assert!(matches!(err, SimError::GridMismatch { index: 0, .. }));
        let err = exponent_samples(&mk(vec![1, 0, 0], 100, 0.3), 100, &[0.3, 0.4]).unwrap_err();
        assert!(matches!(err, SimError::GridLength { .. }));
    }
}

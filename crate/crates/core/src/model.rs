//! State space, capacity sharing and transition rates of the star network.
//!
//! Node `0` is the central node; it interferes with every peripheral node
//! `1..=J`, while peripheral nodes never interfere with one another. With
//! queue lengths `L = (L_0, ..., L_J)` the peripheral nodes jointly receive
//! the fraction
//!
//! ```text
//! W(L) = sum_{j>=1} log(1 + L_j) / sum_{j>=0} log(1 + L_j)
//! ```
//!
//! of the channel and the central node receives `1 - W(L)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("expected {expected} rates in `{field}` (J + 1), found {found}")]
    Arity {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("J must be at least 1")]
    NoPeripheralNodes,
    #[error("`{field}[{index}]` = {value} is not a strictly positive finite rate")]
    NonPositiveRate {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("load rho[{index}] = {rho} is not below 1")]
    LoadNotBelowOne { index: usize, rho: f64 },
    #[error("loads must be strictly increasing: rho[{index}] = {rho} <= rho[{prev}] = {prev_rho}")]
    Ordering {
        index: usize,
        rho: f64,
        prev: usize,
        prev_rho: f64,
    },
    #[error("state has {found} entries, network has {expected} nodes")]
    StateArity { expected: usize, found: usize },
}

/// Arrival and service rates of the `J + 1` nodes. Index 0 is the central node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    #[serde(rename = "J")]
    j: usize,
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl NetworkParams {
    /// Builds parameters after the positivity checks of
    /// [`validate_params`] without the regime assumptions.
    pub fn new(j: usize, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self, ModelError> {
        let params = Self { j, lambda, mu };
        validate_params(&params, false)?;
        Ok(params)
    }

    /// Builds parameters without any validation. Zero arrival rates are
    /// accepted here, which is how single-queue reductions are expressed.
    pub fn new_unchecked(j: usize, lambda: Vec<f64>, mu: Vec<f64>) -> Self {
        Self { j, lambda, mu }
    }

    /// Like [`NetworkParams::new`] but also enforces `rho_j < 1` and
    /// `rho_1 < ... < rho_J`.
    pub fn new_regime(j: usize, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self, ModelError> {
        let params = Self { j, lambda, mu };
        validate_params(&params, true)?;
        Ok(params)
    }

    /// Parameters with unit service rates and the given loads.
    pub fn from_loads(rho: &[f64]) -> Result<Self, ModelError> {
        if rho.len() < 2 {
            return Err(ModelError::NoPeripheralNodes);
        }
        Self::new(rho.len() - 1, rho.to_vec(), vec![1.0; rho.len()])
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn nodes(&self) -> usize {
        self.j + 1
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self, node: usize) -> f64 {
        self.lambda[node] / self.mu[node]
    }

    pub fn loads(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.rho(i)).collect()
    }

    /// Same loads with every rate multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            j: self.j,
            lambda: self.lambda.iter().map(|x| x * factor).collect(),
            mu: self.mu.iter().map(|x| x * factor).collect(),
        }
    }
}

/// Pending-request counts `L_0, ..., L_J`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueueState(Vec<u64>);

impl QueueState {
    pub fn new(counts: Vec<u64>) -> Self {
        Self(counts)
    }

    pub fn empty(nodes: usize) -> Self {
        Self(vec![0; nodes])
    }

    /// `L_0 = n`, every peripheral queue empty.
    pub fn loaded_center(j: usize, n: u64) -> Self {
        let mut counts = vec![0; j + 1];
        counts[0] = n;
        Self(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn get(&self, node: usize) -> u64 {
        self.0[node]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub(crate) fn bump(&mut self, t: Transition) {
        let slot = &mut self.0[t.node];
        match t.delta {
            Delta::Arrival => *slot += 1,
            Delta::Departure => {
                assert!(*slot > 0, "departure from empty queue at node {}", t.node);
                *slot -= 1;
            }
        }
    }
}

impl From<Vec<u64>> for QueueState {
    fn from(counts: Vec<u64>) -> Self {
        Self(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Delta {
    Arrival,
    Departure,
}

impl Delta {
    pub fn as_i64(self) -> i64 {
        match self {
            Delta::Arrival => 1,
            Delta::Departure => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub node: usize,
    pub delta: Delta,
}

impl Transition {
    pub fn arrival(node: usize) -> Self {
        Self {
            node,
            delta: Delta::Arrival,
        }
    }

    pub fn departure(node: usize) -> Self {
        Self {
            node,
            delta: Delta::Departure,
        }
    }
}

/// `W(L)`, the share of the channel given to the peripheral nodes.
///
/// Defined as 0 on the all-zero state; every service indicator is off there.
pub fn capacity_share(state: &QueueState) -> f64 {
    let counts = state.counts();
    let Some((&center, peripheral)) = counts.split_first() else {
        return 0.0;
    };
    let num: f64 = peripheral.iter().map(|&l| log1p_count(l)).sum();
    let den = num + log1p_count(center);
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[inline]
pub(crate) fn log1p_count(l: u64) -> f64 {
    (l as f64).ln_1p()
}

/// All transitions with a nonzero rate out of `state`.
///
/// Arrivals are listed first (nodes `0..=J`), then departures in node order.
/// Arrivals with a zero rate are omitted.
pub fn transition_rates(params: &NetworkParams, state: &QueueState) -> Vec<(Transition, f64)> {
    let mut out = Vec::with_capacity(2 * params.nodes());
    for (node, &rate) in params.lambda().iter().enumerate() {
        if rate > 0.0 {
            out.push((Transition::arrival(node), rate));
        }
    }
    let w = capacity_share(state);
    for (node, &mu) in params.mu().iter().enumerate() {
        if state.get(node) == 0 {
            continue;
        }
        let share = if node == 0 { 1.0 - w } else { w };
        let rate = mu * share;
        if rate > 0.0 {
            out.push((Transition::departure(node), rate));
        }
    }
    out
}

/// Returns `state` with `t` applied.
///
/// # Panics
///
/// On a departure from an empty queue.
pub fn apply_transition(state: &QueueState, t: Transition) -> QueueState {
    let mut next = state.clone();
    next.bump(t);
    next
}

/// Checks rate positivity and, when `require_regime_assumptions` is set,
/// `rho_j < 1` for `j >= 1` together with strictly increasing peripheral
/// loads.
pub fn validate_params(
    params: &NetworkParams,
    require_regime_assumptions: bool,
) -> Result<(), ModelError> {
    if params.j == 0 {
        return Err(ModelError::NoPeripheralNodes);
    }
    let expected = params.j + 1;
    for (field, v) in [("lambda", &params.lambda), ("mu", &params.mu)] {
        if v.len() != expected {
            return Err(ModelError::Arity {
                field,
                expected,
                found: v.len(),
            });
        }
        if let Some((index, &value)) = v
            .iter()
            .enumerate()
            .find(|(_, &x)| !(x.is_finite() && x > 0.0))
        {
            return Err(ModelError::NonPositiveRate {
                field,
                index,
                value,
            });
        }
    }
    if !require_regime_assumptions {
        return Ok(());
    }
    for index in 1..expected {
        let rho = params.rho(index);
        if rho >= 1.0 {
            return Err(ModelError::LoadNotBelowOne { index, rho });
        }
        if index > 1 {
            let prev_rho = params.rho(index - 1);
            if rho <= prev_rho {
                return Err(ModelError::Ordering {
                    index,
                    rho,
                    prev: index - 1,
                    prev_rho,
                });
            }
        }
    }
    Ok(())
}

/// Ensures `state` has one entry per node.
pub fn check_state(params: &NetworkParams, state: &QueueState) -> Result<(), ModelError> {
    if state.len() != params.nodes() {
        return Err(ModelError::StateArity {
            expected: params.nodes(),
            found: state.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn star2() -> NetworkParams {
        NetworkParams::new(2, vec![0.3, 0.2, 0.4], vec![1.0, 1.0, 1.0]).unwrap()
    }

    fn rate_of(rates: &[(Transition, f64)], t: Transition) -> Option<f64> {
        rates.iter().find(|(x, _)| *x == t).map(|(_, r)| *r)
    }

    #[test]
    fn capacity_share_examples() {
        assert_eq!(capacity_share(&QueueState::new(vec![5, 0, 0])), 0.0);
        assert_eq!(capacity_share(&QueueState::new(vec![0, 3, 1])), 1.0);
        let w = capacity_share(&QueueState::new(vec![1, 1, 1]));
        assert!((w - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(capacity_share(&QueueState::new(vec![0, 0, 0])), 0.0);
    }

    #[test]
    fn rates_at_empty_state_are_arrivals_only() {
        let rates = transition_rates(&star2(), &QueueState::empty(3));
        assert_eq!(rates.len(), 3);
        for (node, expected) in [0.3, 0.2, 0.4].into_iter().enumerate() {
            assert_eq!(rate_of(&rates, Transition::arrival(node)), Some(expected));
        }
    }

    #[test]
    fn rates_at_unit_state() {
        let rates = transition_rates(&star2(), &QueueState::new(vec![1, 1, 1]));
        assert_eq!(rates.len(), 6);
        let d0 = rate_of(&rates, Transition::departure(0)).unwrap();
        assert!((d0 - 1.0 / 3.0).abs() < 1e-15);
        for node in [1, 2] {
            let d = rate_of(&rates, Transition::departure(node)).unwrap();
            assert!((d - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rates_skip_empty_peripheral() {
        let rates = transition_rates(&star2(), &QueueState::new(vec![4, 0, 7]));
        let w = 8f64.ln() / (5f64.ln() + 8f64.ln());
        assert_eq!(rate_of(&rates, Transition::departure(1)), None);
        let d0 = rate_of(&rates, Transition::departure(0)).unwrap();
        let d2 = rate_of(&rates, Transition::departure(2)).unwrap();
        assert!((d0 - (1.0 - w)).abs() < 1e-15);
        assert!((d2 - w).abs() < 1e-15);
    }

    #[test]
    fn apply_transition_examples() {
        let s = QueueState::new(vec![1, 0, 0]);
        assert_eq!(
            apply_transition(&s, Transition::departure(0)).counts(),
            &[0, 0, 0]
        );
        let s = QueueState::empty(3);
        assert_eq!(
            apply_transition(&s, Transition::arrival(2)).counts(),
            &[0, 0, 1]
        );
        let s = QueueState::new(vec![3, 2, 1]);
        assert_eq!(
            apply_transition(&s, Transition::departure(2)).counts(),
            &[3, 2, 0]
        );
    }

    #[test]
    #[should_panic(expected = "departure from empty queue")]
    fn departure_from_empty_queue_panics() {
        apply_transition(&QueueState::empty(3), Transition::departure(1));
    }

    #[test]
    fn validation_errors() {
        let p = NetworkParams::new_unchecked(2, vec![0.3, 0.2, 0.4], vec![1.0; 3]);
        assert!(validate_params(&p, true).is_ok());

        let p = NetworkParams::new_unchecked(2, vec![0.3, 0.4, 0.2], vec![1.0; 3]);
        assert!(matches!(
            validate_params(&p, true),
            Err(ModelError::Ordering { index: 2, .. })
        ));
        // Ordering only matters for regime analysis.
        assert!(validate_params(&p, false).is_ok());

        let p = NetworkParams::new_unchecked(2, vec![0.3, 0.2, 0.4], vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            validate_params(&p, false),
            Err(ModelError::NonPositiveRate {
                field: "mu",
                index: 1,
                ..
            })
        ));

        let p = NetworkParams::new_unchecked(2, vec![0.3, 0.2, 1.4], vec![1.0; 3]);
        assert!(matches!(
            validate_params(&p, true),
            Err(ModelError::LoadNotBelowOne { index: 2, .. })
        ));

        let p = NetworkParams::new_unchecked(2, vec![0.3, 0.2], vec![1.0; 3]);
        assert!(matches!(
            validate_params(&p, false),
            Err(ModelError::Arity {
                field: "lambda",
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn central_load_above_one_is_not_a_regime_error() {
        let p = NetworkParams::new_unchecked(2, vec![1.5, 0.2, 0.4], vec![1.0; 3]);
        assert!(validate_params(&p, true).is_ok());
    }

    fn state_strategy() -> impl Strategy<Value = Vec<u64>> {
        (2usize..7).prop_flat_map(|n| proptest::collection::vec(0u64..1_000_000, n))
    }

    proptest! {
        #[test]
        fn share_in_unit_interval(counts in state_strategy()) {
            let s = QueueState::new(counts.clone());
            let w = capacity_share(&s);
            prop_assert!((0.0..=1.0).contains(&w));
            let peripheral_busy = counts[1..].iter().any(|&c| c > 0);
            prop_assert_eq!(w == 0.0, !peripheral_busy);
            prop_assert_eq!(w == 1.0, counts[0] == 0 && peripheral_busy);
        }

        #[test]
        fn share_is_permutation_invariant(counts in state_strategy(), rot in 0usize..6) {
            let mut permuted = counts.clone();
            let k = rot % (permuted.len() - 1);
            permuted[1..].rotate_left(k);
            permuted[1..].reverse();
            let a = capacity_share(&QueueState::new(counts));
            let b = capacity_share(&QueueState::new(permuted));
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn departures_conserve_capacity(counts in proptest::collection::vec(1u64..10_000, 2..7), mu in 0.1f64..5.0) {
            let n = counts.len();
            let p = NetworkParams::new(n - 1, vec![0.5; n], vec![mu; n]).unwrap();
            let s = QueueState::new(counts);
            let w = capacity_share(&s);
            let dep: f64 = transition_rates(&p, &s)
                .iter()
                .filter(|(t, _)| t.delta == Delta::Departure)
                .map(|(_, r)| r)
                .sum();
            // Central node gets mu(1-W), each of the J peripheral nodes mu*W.
            let expected = mu * (1.0 - w) + (n - 1) as f64 * mu * w;
            prop_assert!((dep - expected).abs() <= 1e-9);
            prop_assert!(transition_rates(&p, &s).iter().all(|(_, r)| *r > 0.0));
        }

        #[test]
        fn transitions_preserve_nonnegativity(counts in state_strategy()) {
            let n = counts.len();
            let p = NetworkParams::new(n - 1, vec![0.5; n], vec![1.0; n]).unwrap();
            let s = QueueState::new(counts);
            for (t, _) in transition_rates(&p, &s) {
                let next = apply_transition(&s, t);
                let changed: Vec<usize> = (0..n).filter(|&i| next.get(i) != s.get(i)).collect();
                prop_assert_eq!(changed, vec![t.node]);
            }
        }
    }
}

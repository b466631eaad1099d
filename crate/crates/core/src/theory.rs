//! Closed-form asymptotics of the star network started from `(N, 0, ..., 0)`.
//!
//! Two time scales are covered:
//!
//! * the exponent scale `N^t`, `t in (0, 1)`, on which peripheral queue `j`
//!   behaves like `N^{a_j(t)}` for a piecewise-linear profile `a_j`;
//! * the fluid scale `N t`, on which the queues are affine in `t` after
//!   normalisation by `N`, `N^x` or `(log N)^3` depending on the regime.
//!
//! With `alpha_j = rho_j / (1 - rho_j)` queue `j` peaks at
//! `b_j = alpha_j / (J - j + 1)`, then decays with slope `-(J - j)` and
//! reaches zero exponent at `e_j = alpha_j / (J - j)`. Queue `J` never decays.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_params, ModelError, NetworkParams};
use crate::serde_inf;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("load {0} is outside (0, 1)")]
    LoadDomain(f64),
    #[error(
        "beta*_{kappa} = alpha_{kappa} / (J - {kappa}) equals 1; regime boundary is not classified"
    )]
    DegenerateBoundary { kappa: usize },
    #[error("node {node} is outside 1..={j}")]
    Node { node: usize, j: usize },
    #[error("active count must be at least 1")]
    ActiveCount,
    #[error("fluid time {0} is outside the domain of the prediction")]
    FluidTime(f64),
}

/// `rho / (1 - rho)`.
pub fn alpha_of(rho: f64) -> Result<f64, TheoryError> {
    if rho > 0.0 && rho < 1.0 {
        Ok(rho / (1.0 - rho))
    } else {
        Err(TheoryError::LoadDomain(rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    /// No peripheral queue equilibrates before the fluid scale.
    Case1,
    /// Queues `1..=kappa` equilibrate; queue `kappa` empties before `t = 1`.
    Case2a,
    /// Queue `kappa` is still decaying on the fluid scale.
    Case2b,
    /// Only the central node and queue `J` are visible on the fluid scale.
    Case3,
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseLabel::Case1 => "Case1",
            CaseLabel::Case2a => "Case2a",
            CaseLabel::Case2b => "Case2b",
            CaseLabel::Case3 => "Case3",
        };
        f.write_str(s)
    }
}

/// Exponent profile of one peripheral queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node: usize,
    pub alpha: f64,
    /// `b_j`, where the exponent stops rising. Not truncated; the profile is
    /// only evaluated on `[0, 1]`.
    pub peak_time: f64,
    /// `e_j`, where the exponent returns to zero; `inf` for node `J`.
    #[serde(with = "serde_inf")]
    pub vanish_time: f64,
    /// Magnitude of the slope on the decreasing segment, `J - j`.
    pub descent_slope: f64,
}

impl NodeProfile {
    /// `a_j(t)` for `t >= 0`.
    pub fn value(&self, t: f64) -> f64 {
        if t <= self.peak_time {
            t
        } else if t < self.vanish_time {
            self.alpha - self.descent_slope * t
        } else {
            0.0
        }
    }

    pub fn segment(&self, t: f64) -> Segment {
        if t <= self.peak_time {
            Segment::Rising
        } else if t < self.vanish_time {
            Segment::Decreasing
        } else {
            Segment::Vanished
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Rising,
    Decreasing,
    Vanished,
}

/// Piecewise-linear exponent profiles `a_1, ..., a_J` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentProfile {
    #[serde(rename = "J")]
    pub j: usize,
    pub nodes: Vec<NodeProfile>,
}

impl ExponentProfile {
    /// Profile of peripheral node `node` (1-based).
    pub fn node(&self, node: usize) -> &NodeProfile {
        &self.nodes[node - 1]
    }

    pub fn value(&self, node: usize, t: f64) -> f64 {
        self.node(node).value(t)
    }

    /// Predicted limit of `L_j(N^t) / N^t` while queue `j` is on its rising
    /// segment; `None` once it peaked.
    ///
    /// While queue `i < j` decays, `L_j(N^t) / N^t -> mu_j (rho_j - rho_i)`.
    /// Between phases, with queues `i..=J` active and all rising, the ratio
    /// follows [`growth_slope`] with `k = J - i + 1`.
    pub fn rising_ratio(&self, params: &NetworkParams, node: usize, t: f64) -> Option<f64> {
        if self.node(node).segment(t) != Segment::Rising {
            return None;
        }
        let first_active = self
            .nodes
            .iter()
            .find(|p| p.segment(t) != Segment::Vanished)
            .map(|p| p.node)?;
        let lead = self.node(first_active);
        if first_active < node && lead.segment(t) == Segment::Decreasing {
            let i = first_active;
            return Some(params.mu()[node] * (params.rho(node) - params.rho(i)));
        }
        let k = self.j - first_active + 1;
        Some(growth_rate(params, k, node, t))
    }
}

/// Affine coefficients of the fluid functions:
/// `gamma_0(t) = 1 + center_slope * t`, `gamma_j(t) = slopes[j - 1] * t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCoefficients {
    pub center_slope: f64,
    pub slopes: Vec<f64>,
}

impl GammaCoefficients {
    /// `gamma_0(t)`, clamped at zero.
    pub fn center(&self, t: f64) -> f64 {
        (1.0 + self.center_slope * t).max(0.0)
    }

    pub fn peripheral(&self, node: usize, t: f64) -> f64 {
        self.slopes[node - 1] * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    #[serde(rename = "J")]
    pub j: usize,
    pub rho: Vec<f64>,
    /// `alpha_j` for `j = 1..=J`.
    pub alpha: Vec<f64>,
    /// `beta*_j = alpha_j / (J - j)`; `inf` for `j = J`.
    #[serde(with = "serde_inf::vec")]
    pub beta_star: Vec<f64>,
    pub kappa: usize,
    #[serde(rename = "condition_C")]
    pub condition_c: bool,
    pub case_label: CaseLabel,
    /// Time (fluid scale) at which the central node empties.
    #[serde(with = "serde_inf")]
    pub t_zero: f64,
    /// End of the interval on which the fluid prediction is asserted.
    #[serde(with = "serde_inf")]
    pub validity_horizon: f64,
    pub stable: bool,
    pub gamma: GammaCoefficients,
    pub profile: ExponentProfile,
}

/// Full regime classification and closed-form predictions.
pub fn regime(params: &NetworkParams) -> Result<RegimeReport, TheoryError> {
    validate_params(params, true)?;
    let j_max = params.j();
    let rho = params.loads();
    let alpha: Vec<f64> = (1..=j_max)
        .map(|j| alpha_of(rho[j]))
        .collect::<Result<_, _>>()?;
    let beta_star: Vec<f64> = (1..=j_max)
        .map(|j| {
            if j == j_max {
                f64::INFINITY
            } else {
                alpha[j - 1] / (j_max - j) as f64
            }
        })
        .collect();
    let kappa = (1..=j_max)
        .filter(|&k| alpha[k - 1] / ((j_max - k + 1) as f64) < 1.0)
        .max()
        .unwrap_or(0);

    let case_label = if kappa == 0 {
        CaseLabel::Case1
    } else if kappa == j_max {
        CaseLabel::Case3
    } else {
        let b = beta_star[kappa - 1];
        if b < 1.0 {
            CaseLabel::Case2a
        } else if b > 1.0 {
            CaseLabel::Case2b
        } else {
            return Err(TheoryError::DegenerateBoundary { kappa });
        }
    };
    let condition_c = matches!(case_label, CaseLabel::Case1 | CaseLabel::Case2a);

    let mu0 = params.mu()[0];
    let gamma = if condition_c {
        let m = (j_max - kappa + 1) as f64;
        GammaCoefficients {
            center_slope: mu0 * (rho[0] - 1.0 / m),
            slopes: (1..=j_max)
                .map(|j| params.mu()[j] * (rho[j] - (m - 1.0) / m))
                .collect(),
        }
    } else {
        GammaCoefficients {
            center_slope: mu0 * (rho[0] + rho[kappa] - 1.0),
            slopes: (1..=j_max)
                .map(|j| params.mu()[j] * (rho[j] - rho[kappa]))
                .collect(),
        }
    };
    let t_zero = if condition_c {
        let m = (j_max - kappa + 1) as f64;
        m / positive_part(mu0 * (1.0 - rho[0] * m))
    } else {
        1.0 / positive_part(mu0 * (1.0 - rho[0] - rho[kappa]))
    };
    let validity_horizon = if case_label == CaseLabel::Case3 {
        f64::INFINITY
    } else {
        t_zero
    };

    Ok(RegimeReport {
        j: j_max,
        rho,
        profile: profile_from_alpha(j_max, &alpha),
        alpha,
        beta_star,
        kappa,
        condition_c,
        case_label,
        t_zero,
        validity_horizon,
        stable: stability(params),
        gamma,
    })
}

/// `x / 0` for `x > 0` is `inf`, which is the convention wanted for `t_zero`.
fn positive_part(x: f64) -> f64 {
    x.max(0.0)
}

/// Breakpoints and slopes of every `a_j`.
pub fn exponent_profile(params: &NetworkParams) -> Result<ExponentProfile, TheoryError> {
    validate_params(params, true)?;
    let alpha: Vec<f64> = (1..=params.j())
        .map(|j| alpha_of(params.rho(j)))
        .collect::<Result<_, _>>()?;
    Ok(profile_from_alpha(params.j(), &alpha))
}

fn profile_from_alpha(j_max: usize, alpha: &[f64]) -> ExponentProfile {
    let nodes = alpha
        .iter()
        .enumerate()
        .map(|(idx, &a)| {
            let node = idx + 1;
            let down = (j_max - node) as f64;
            NodeProfile {
                node,
                alpha: a,
                peak_time: a / (down + 1.0),
                vanish_time: if node == j_max {
                    f64::INFINITY
                } else {
                    a / down
                },
                descent_slope: down,
            }
        })
        .collect();
    ExponentProfile { j: j_max, nodes }
}

/// `lambda_j - mu_j k t / (1 + k t)`: the growth rate of `L_j(N^t) / N^t`
/// when `k` peripheral queues are active.
pub fn growth_slope(
    params: &NetworkParams,
    active_count: usize,
    node: usize,
    t: f64,
) -> Result<f64, TheoryError> {
    if active_count == 0 {
        return Err(TheoryError::ActiveCount);
    }
    if node == 0 || node > params.j() {
        return Err(TheoryError::Node {
            node,
            j: params.j(),
        });
    }
    Ok(growth_rate(params, active_count, node, t))
}

fn growth_rate(params: &NetworkParams, k: usize, node: usize, t: f64) -> f64 {
    let kt = k as f64 * t;
    params.lambda()[node] - params.mu()[node] * kt / (1.0 + kt)
}

/// `prod_{i > j} 1 / (mu_i (rho_i - rho_j))`, the prefactor `C` in
/// `L_j(N^t) ~ C N^{a_j(t)}` on the decreasing segment of queue `j`.
pub fn equilibrium_product_constant(
    params: &NetworkParams,
    node: usize,
) -> Result<f64, TheoryError> {
    if node == 0 || node > params.j() {
        return Err(TheoryError::Node {
            node,
            j: params.j(),
        });
    }
    let rho_j = params.rho(node);
    Ok(((node + 1)..=params.j())
        .map(|i| 1.0 / (params.mu()[i] * (params.rho(i) - rho_j)))
        .product())
}

/// Normalisation of a queue on the fluid scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "exponent", rename_all = "snake_case")]
pub enum FluidScale {
    /// `N`.
    Linear,
    /// `N^x`.
    Power(f64),
    /// `(log N)^3`; the predicted value is always 0.
    LogCubed,
}

impl FluidScale {
    pub fn evaluate(&self, n: f64) -> f64 {
        match *self {
            FluidScale::Linear => n,
            FluidScale::Power(x) => n.powf(x),
            FluidScale::LogCubed => n.ln().powi(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidCoordinate {
    pub node: usize,
    pub scale: FluidScale,
    pub value: f64,
}

/// Fluid-scale prediction at time `t` for every node `0..=J`:
/// `L_j(N t) / scale_j(N) -> value_j`.
pub fn fluid_limit(params: &NetworkParams, t: f64) -> Result<Vec<FluidCoordinate>, TheoryError> {
    let report = regime(params)?;
    fluid_from_report(&report, t)
}

pub fn fluid_from_report(
    report: &RegimeReport,
    t: f64,
) -> Result<Vec<FluidCoordinate>, TheoryError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(TheoryError::FluidTime(t));
    }
    let j_max = report.j;
    let kappa = report.kappa;
    let g = &report.gamma;
    let gamma0 = g.center(t);
    let mut out = Vec::with_capacity(j_max + 1);
    out.push(FluidCoordinate {
        node: 0,
        scale: FluidScale::Linear,
        value: gamma0,
    });
    let null = |node| FluidCoordinate {
        node,
        scale: FluidScale::LogCubed,
        value: 0.0,
    };
    let linear = |node| FluidCoordinate {
        node,
        scale: FluidScale::Linear,
        value: g.peripheral(node, t),
    };
    match report.case_label {
        CaseLabel::Case1 => out.extend((1..=j_max).map(linear)),
        CaseLabel::Case2a => {
            out.extend((1..=kappa).map(null));
            out.extend((kappa + 1..=j_max).map(linear));
        }
        CaseLabel::Case2b => {
            out.extend((1..kappa).map(null));
            let denom: f64 = (kappa + 1..=j_max).map(|i| g.peripheral(i, t)).product();
            if denom <= 0.0 {
                return Err(TheoryError::FluidTime(t));
            }
            out.push(FluidCoordinate {
                node: kappa,
                scale: FluidScale::Power(report.alpha[kappa - 1] - (j_max - kappa) as f64),
                value: 1.0 / denom,
            });
            out.extend((kappa + 1..=j_max).map(linear));
        }
        CaseLabel::Case3 => {
            out.extend((1..j_max).map(null));
            let a = report.alpha[j_max - 1];
            out.push(FluidCoordinate {
                node: j_max,
                scale: FluidScale::Power(a),
                value: gamma0.powf(a),
            });
        }
    }
    Ok(out)
}

/// Ergodicity verdict: `rho_0 + max_j rho_j < 1`.
pub fn stability(params: &NetworkParams) -> bool {
    let peak = (1..=params.j())
        .map(|j| params.rho(j))
        .fold(f64::NEG_INFINITY, f64::max);
    params.rho(0) + peak < 1.0
}

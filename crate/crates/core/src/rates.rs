//! Regime transition rates: load indicators (utilization ratio and ratio of
//! work in progress), the per-edge rate laws, the aggregate jump rate and the
//! dominating bound used by the thinning sampler.

use crate::model::Scenario;
use crate::pdmp::HybridState;
use crate::solver::NetworkState;

/// Rate-law family. `ConstantMatrix` holds state-independent rates (the
/// diagonal is ignored; it is defined as the off-diagonal row sum and never
/// stored or queried). `LinearLoadDependent` is the two-state law where
/// failures scale with utilization and repairs with stored work.
#[derive(Debug, Clone, PartialEq)]
pub enum RateModelSpec {
    ConstantMatrix {
        /// Per edge, a C^e x C^e matrix of rates, row = from, column = to.
        matrices: Vec<Vec<Vec<f64>>>,
    },
    LinearLoadDependent {
        down_ref: f64,
        rep_ref: f64,
        beta: f64,
    },
}

impl RateModelSpec {
    pub fn down_min(&self) -> f64 {
        match self {
            Self::LinearLoadDependent { down_ref, beta, .. } => (1.0 - beta) * down_ref,
            Self::ConstantMatrix { .. } => 0.0,
        }
    }

    pub fn down_max(&self) -> f64 {
        match self {
            Self::LinearLoadDependent { down_ref, beta, .. } => (1.0 + beta) * down_ref,
            Self::ConstantMatrix { .. } => 0.0,
        }
    }

    pub fn rep_min(&self) -> f64 {
        match self {
            Self::LinearLoadDependent { rep_ref, beta, .. } => (1.0 - beta) * rep_ref,
            Self::ConstantMatrix { .. } => 0.0,
        }
    }

    pub fn rep_max(&self) -> f64 {
        match self {
            Self::LinearLoadDependent { rep_ref, beta, .. } => (1.0 + beta) * rep_ref,
            Self::ConstantMatrix { .. } => 0.0,
        }
    }

    /// Structural checks, appended to a validation report.
    pub fn validate(&self, sc: &Scenario, violations: &mut Vec<String>) {
        match self {
            Self::LinearLoadDependent {
                down_ref,
                rep_ref,
                beta,
            } => {
                for (name, v) in [("down_ref", down_ref), ("rep_ref", rep_ref)] {
                    if !v.is_finite() || *v < 0.0 {
                        violations.push(format!("rate {name} = {v} must be finite and >= 0"));
                    }
                }
                if !(0.0..=1.0).contains(beta) {
                    violations.push(format!("beta = {beta} outside [0, 1]"));
                }
                for e in 0..sc.num_edges() {
                    let id = sc.topology.edges[e].id;
                    if sc.num_states(e) != 2 {
                        violations.push(format!(
                            "load-dependent rates require 2 capacity states, edge {id} has {}",
                            sc.num_states(e)
                        ));
                    } else if sc.capacities[e][1] < sc.capacities[e][0] {
                        violations.push(format!(
                            "load-dependent rates require mu(2) = mu_max on edge {id}"
                        ));
                    }
                }
            }
            Self::ConstantMatrix { matrices } => {
                if matrices.len() != sc.num_edges() {
                    violations.push(format!(
                        "{} rate matrices for {} edges",
                        matrices.len(),
                        sc.num_edges()
                    ));
                    return;
                }
                for (e, m) in matrices.iter().enumerate() {
                    let id = sc.topology.edges[e].id;
                    let c = sc.num_states(e);
                    if m.len() != c || m.iter().any(|row| row.len() != c) {
                        violations.push(format!(
                            "rate matrix of edge {id} is not {c}x{c}"
                        ));
                        continue;
                    }
                    for (i, row) in m.iter().enumerate() {
                        for (j, &r) in row.iter().enumerate() {
                            if i != j && (!r.is_finite() || r < 0.0) {
                                violations.push(format!(
                                    "rate ({},{}) = {r} on edge {id} must be finite and >= 0",
                                    i + 1,
                                    j + 1
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-edge dominating rates and their network sum.
#[derive(Debug, Clone)]
pub struct RateBounds {
    pub per_edge: Vec<f64>,
    pub total: f64,
}

impl RateBounds {
    pub fn from_per_edge(per_edge: Vec<f64>) -> Self {
        let total = per_edge.iter().sum();
        Self { per_edge, total }
    }
}

/// Utilization ratio with an explicit capacity value: average production flux
/// relative to the maximal flux of the processor.
pub fn ur_at_capacity(net: &NetworkState, e: usize, cap: f64, sc: &Scenario) -> f64 {
    let mu_max = sc.mu_max(e);
    if mu_max == 0.0 {
        return 0.0;
    }
    let p = &sc.processors[e];
    let sum: f64 = net.densities[e]
        .iter()
        .map(|&rho| cap.min(p.velocity * rho))
        .sum();
    sc.dx * sum / (mu_max * p.length)
}

/// Utilization ratio at the edge's current regime.
pub fn ur(net: &NetworkState, regimes: &[usize], e: usize, sc: &Scenario) -> f64 {
    ur_at_capacity(net, e, sc.capacities[e][regimes[e] - 1], sc)
}

/// Ratio of work in progress: stored goods relative to a full machine.
/// Unclamped; rate laws clamp to [0, 1] before use.
pub fn rwip(net: &NetworkState, e: usize, sc: &Scenario) -> f64 {
    let mu_max = sc.mu_max(e);
    if mu_max == 0.0 {
        return 0.0;
    }
    let p = &sc.processors[e];
    let sum: f64 = net.densities[e].iter().sum();
    p.velocity * sc.dx * sum / (mu_max * p.length)
}

/// Transition rate of edge `e` from regime `i` to regime `j` at time `t`.
///
/// For the load-dependent law, the failure rate evaluates the utilization
/// ratio at the up-state capacity mu(2) regardless of the current regime,
/// and the repair rate uses the clamped ratio of work in progress.
pub fn rate(
    spec: &RateModelSpec,
    e: usize,
    i: usize,
    j: usize,
    _t: f64,
    net: &NetworkState,
    sc: &Scenario,
) -> f64 {
    assert_ne!(i, j, "diagonal rates are never queried");
    match spec {
        RateModelSpec::ConstantMatrix { matrices } => matrices[e][i - 1][j - 1],
        RateModelSpec::LinearLoadDependent { .. } => {
            if i == 2 && j == 1 {
                let u = ur_at_capacity(net, e, sc.capacities[e][1], sc);
                spec.down_min() + (spec.down_max() - spec.down_min()) * u
            } else {
                let w = rwip(net, e, sc).clamp(0.0, 1.0);
                spec.rep_max() - (spec.rep_max() - spec.rep_min()) * w
            }
        }
    }
}

/// Total outgoing rate of edge `e` in regime `r` (the off-diagonal row sum).
pub fn rate_row_sum(
    spec: &RateModelSpec,
    e: usize,
    r: usize,
    t: f64,
    net: &NetworkState,
    sc: &Scenario,
) -> f64 {
    (1..=sc.num_states(e))
        .filter(|&j| j != r)
        .map(|j| rate(spec, e, r, j, t, net, sc))
        .sum()
}

/// Aggregate jump rate of the hybrid state: sum over edges of the current
/// regime's outgoing rate.
pub fn psi(spec: &RateModelSpec, t: f64, y: &HybridState, sc: &Scenario) -> f64 {
    (0..sc.num_edges())
        .map(|e| rate_row_sum(spec, e, y.regimes[e], t, &y.network, sc))
        .sum()
}

/// Dominating rate per edge over every regime and every reachable load, plus
/// the network sum used by the thinning sampler.
pub fn uniform_bound(spec: &RateModelSpec, sc: &Scenario) -> RateBounds {
    let per_edge: Vec<f64> = (0..sc.num_edges())
        .map(|e| match spec {
            RateModelSpec::ConstantMatrix { matrices } => (0..sc.num_states(e))
                .map(|i| {
                    (0..sc.num_states(e))
                        .filter(|&j| j != i)
                        .map(|j| matrices[e][i][j])
                        .sum::<f64>()
                })
                .fold(0.0, f64::max),
            RateModelSpec::LinearLoadDependent { .. } => spec.down_max().max(spec.rep_max()),
        })
        .collect();
    RateBounds::from_per_edge(per_edge)
}

//! Shared scenario builders for unit tests.

use std::collections::BTreeMap;

use crate::model::{
    DtPolicy, InitialState, PiecewiseConstantSignal, Processor, Scenario, Topology,
};
use crate::rates::RateModelSpec;

fn uniform_parts(
    topology: Topology,
    inflows: BTreeMap<usize, PiecewiseConstantSignal>,
    distribution: Vec<PiecewiseConstantSignal>,
    beta: f64,
) -> Scenario {
    let n = topology.num_edges();
    Scenario {
        topology,
        processors: vec![
            Processor {
                a: 0.0,
                length: 1.0,
                velocity: 1.0,
            };
            n
        ],
        capacities: vec![vec![0.0, 2.0]; n],
        distribution,
        inflows,
        rates: RateModelSpec::LinearLoadDependent {
            down_ref: 1.0 / 0.85,
            rep_ref: 1.0 / 0.15,
            beta,
        },
        initial: InitialState {
            queues: vec![0.0; n],
            densities: vec![vec![0.0; 10]; n],
            regimes: vec![2; n],
        },
        horizon: 30.0,
        dx: 0.1,
        dt_policy: DtPolicy::CflEqual,
        output_step: 0.1,
    }
}

/// The seven-processor diamond network with alpha_1 = alpha_2 = 0.5 and
/// constant inflow 1.5, intact and empty at time zero.
pub fn diamond_scenario(beta: f64) -> Scenario {
    let topology = Topology::from_edges(&[
        (1, 1, 2),
        (2, 2, 3),
        (3, 2, 4),
        (4, 3, 4),
        (5, 3, 5),
        (6, 4, 5),
        (7, 5, 6),
    ])
    .unwrap();
    let mut inflows = BTreeMap::new();
    inflows.insert(0, PiecewiseConstantSignal::constant(1.5));
    let one = PiecewiseConstantSignal::constant(1.0);
    let half = PiecewiseConstantSignal::constant(0.5);
    let distribution = vec![
        one.clone(),
        half.clone(),
        half.clone(),
        half.clone(),
        half,
        one.clone(),
        one,
    ];
    uniform_parts(topology, inflows, distribution, beta)
}

/// One processor fed by constant inflow 1.5.
pub fn single_edge_scenario() -> Scenario {
    chain_scenario(1)
}

/// A chain of `n` identical processors fed by constant inflow 1.5.
pub fn chain_scenario(n: usize) -> Scenario {
    let edges: Vec<(u32, u32, u32)> = (0..n)
        .map(|e| (e as u32 + 1, e as u32 + 1, e as u32 + 2))
        .collect();
    let topology = Topology::from_edges(&edges).unwrap();
    let mut inflows = BTreeMap::new();
    inflows.insert(0, PiecewiseConstantSignal::constant(1.5));
    let distribution = vec![PiecewiseConstantSignal::constant(1.0); n];
    uniform_parts(topology, inflows, distribution, 0.0)
}

/// Constant-matrix rates with every off-diagonal entry `lambda` on two-state
/// edges: the aggregate jump rate is `n * lambda` in every state.
pub fn constant_rate_spec(num_edges: usize, lambda: f64) -> RateModelSpec {
    RateModelSpec::ConstantMatrix {
        matrices: vec![vec![vec![0.0, lambda], vec![lambda, 0.0]]; num_edges],
    }
}

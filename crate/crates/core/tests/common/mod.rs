//! Shared fixtures for the integration suites: bundled scenarios, randomized
//! small networks, and distribution-test helpers.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::Rng;

use prodnet::model::{
    DtPolicy, InitialState, PiecewiseConstantSignal, Processor, Scenario, Topology,
};
use prodnet::RateModelSpec;

pub const DIAMOND_JSON: &str = include_str!("../../../../scenarios/diamond_constant_inflow.json");
pub const PULSED_JSON: &str = include_str!("../../../../scenarios/diamond_pulsed_inflow.json");

/// The bundled diamond experiment with the load-dependency dial set to `beta`.
pub fn diamond(beta: f64) -> Scenario {
    let mut sc = prodnet::scenario_from_str(DIAMOND_JSON).expect("bundled scenario parses");
    match &mut sc.rates {
        RateModelSpec::LinearLoadDependent { beta: b, .. } => *b = beta,
        _ => unreachable!(),
    }
    sc
}

/// One processor with constant-matrix rates `lambda` in both directions, so
/// the aggregate jump rate is exactly `lambda` in every state.
pub fn single_edge_constant_rate(lambda: f64) -> Scenario {
    let topology = Topology::from_edges(&[(1, 1, 2)]).unwrap();
    let mut inflows = BTreeMap::new();
    inflows.insert(0, PiecewiseConstantSignal::constant(1.5));
    Scenario {
        topology,
        processors: vec![Processor {
            a: 0.0,
            length: 1.0,
            velocity: 1.0,
        }],
        capacities: vec![vec![0.0, 2.0]],
        distribution: vec![PiecewiseConstantSignal::constant(1.0)],
        inflows,
        rates: RateModelSpec::ConstantMatrix {
            matrices: vec![vec![vec![0.0, lambda], vec![lambda, 0.0]]],
        },
        initial: InitialState {
            queues: vec![0.0],
            densities: vec![vec![0.0; 10]],
            regimes: vec![2],
        },
        horizon: 30.0,
        dx: 0.1,
        dt_policy: DtPolicy::CflEqual,
        output_step: 0.1,
    }
}

/// Kolmogorov-Smirnov distance of a sample against the Exp(rate) CDF.
pub fn ks_exponential(mut samples: Vec<f64>, rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn random_signal(rng: &mut StdRng, horizon: f64, max_value: f64) -> PiecewiseConstantSignal {
    let extra = rng.gen_range(0..=3);
    let mut breakpoints = vec![0.0];
    let mut candidates: Vec<f64> = (1..(2.0 * horizon) as u32).map(|k| k as f64 * 0.5).collect();
    for _ in 0..extra {
        if candidates.is_empty() {
            break;
        }
        let i = rng.gen_range(0..candidates.len());
        breakpoints.push(candidates.remove(i));
    }
    breakpoints.sort_by(f64::total_cmp);
    let values = breakpoints
        .iter()
        .map(|_| rng.gen_range(0.0..max_value))
        .collect();
    PiecewiseConstantSignal::new(breakpoints, values)
}

/// A random small network (at most 5 edges) with random piecewise inflows,
/// random parameters and load-dependent rates hot enough to produce jumpy
/// paths. Always validates cleanly.
pub fn random_scenario(rng: &mut StdRng) -> Scenario {
    let dx = 0.1;
    let horizon = 12.0;
    let edges: Vec<(u32, u32, u32)> = match rng.gen_range(0..4) {
        0 => {
            let k = rng.gen_range(1..=5);
            (0..k).map(|e| (e + 1, e + 1, e + 2)).collect()
        }
        // one processor splitting onto two
        1 => vec![(1, 1, 2), (2, 2, 3), (3, 2, 4)],
        // two sources merging into one
        2 => vec![(1, 1, 3), (2, 2, 3), (3, 3, 4)],
        // split then merge
        _ => vec![(1, 1, 2), (2, 2, 3), (3, 2, 4), (4, 3, 5), (5, 4, 5)],
    };
    let topology = Topology::from_edges(&edges).unwrap();
    let n = topology.num_edges();

    let mut processors = Vec::new();
    let mut capacities = Vec::new();
    let mut densities = Vec::new();
    let mut queues = Vec::new();
    let mut regimes = Vec::new();
    for _ in 0..n {
        let cells = rng.gen_range(5..=12);
        let velocity = rng.gen_range(0.5..2.0);
        let up = rng.gen_range(1.0..3.0);
        let down = if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(0.0..0.5)
        };
        processors.push(Processor {
            a: 0.0,
            length: cells as f64 * dx,
            velocity,
        });
        capacities.push(vec![down, up]);
        densities.push((0..cells).map(|_| rng.gen_range(0.0..up / velocity)).collect());
        queues.push(rng.gen_range(0.0..1.5));
        regimes.push(rng.gen_range(1..=2));
    }

    let mut distribution = vec![PiecewiseConstantSignal::constant(1.0); n];
    for v in &topology.vertices {
        if v.outgoing.len() == 2 {
            let alpha = rng.gen_range(0.1..0.9);
            distribution[v.outgoing[0]] = PiecewiseConstantSignal::constant(alpha);
            distribution[v.outgoing[1]] = PiecewiseConstantSignal::constant(1.0 - alpha);
        }
    }

    let mut inflows = BTreeMap::new();
    for &v in &topology.inflow_vertices {
        inflows.insert(v, random_signal(rng, horizon, 2.5));
    }

    let sc = Scenario {
        topology,
        processors,
        capacities,
        distribution,
        inflows,
        rates: RateModelSpec::LinearLoadDependent {
            down_ref: rng.gen_range(0.5..4.0),
            rep_ref: rng.gen_range(1.0..8.0),
            beta: rng.gen_range(0.0..1.0),
        },
        initial: InitialState {
            queues,
            densities,
            regimes,
        },
        horizon,
        dx,
        dt_policy: DtPolicy::CflEqual,
        output_step: 0.5,
    };
    let report = prodnet::validate_scenario(&sc);
    assert!(report.is_ok(), "generated scenario invalid: {:?}", report.violations);
    sc
}

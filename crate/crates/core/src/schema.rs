//! JSON scenario format: a single structured document describing topology,
//! processors, distribution rates, inflows, the rate model, numerics and the
//! initial state. Parsing resolves external ids to internal indices; all
//! value-level checking stays in [`validate_scenario`](crate::model::validate_scenario).

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    DtPolicy, InitialState, PiecewiseConstantSignal, Processor, Scenario, Topology,
};
use crate::rates::RateModelSpec;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid scenario document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Semantic(String),
}

fn semantic(msg: impl Into<String>) -> SchemaError {
    SchemaError::Semantic(msg.into())
}

fn parse_id(key: &str, what: &str) -> Result<u32, SchemaError> {
    key.parse()
        .map_err(|_| semantic(format!("{what} key \"{key}\" is not an integer id")))
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    topology: TopologySchema,
    processors: BTreeMap<String, ProcessorSchema>,
    #[serde(default)]
    distribution: BTreeMap<String, BTreeMap<String, SignalSchema>>,
    #[serde(default)]
    inflows: BTreeMap<String, SignalSchema>,
    rates: RatesSchema,
    numerics: NumericsSchema,
    #[serde(default)]
    initial: InitialSchema,
}

#[derive(Debug, Deserialize)]
struct TopologySchema {
    edges: Vec<EdgeSchema>,
}

#[derive(Debug, Deserialize)]
struct EdgeSchema {
    id: u32,
    from: u32,
    to: u32,
}

#[derive(Debug, Deserialize)]
struct ProcessorSchema {
    #[serde(default)]
    a: f64,
    #[serde(default = "one")]
    length: f64,
    velocity: f64,
    capacities: Vec<f64>,
    /// Defaults to the last capacity state.
    initial_regime: Option<usize>,
}

fn one() -> f64 {
    1.0
}

/// Either a bare number (constant signal) or explicit breakpoints/values.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SignalSchema {
    Constant(f64),
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl From<SignalSchema> for PiecewiseConstantSignal {
    fn from(s: SignalSchema) -> Self {
        match s {
            SignalSchema::Constant(v) => PiecewiseConstantSignal::constant(v),
            SignalSchema::Piecewise {
                breakpoints,
                values,
            } => PiecewiseConstantSignal::new(breakpoints, values),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
enum RatesSchema {
    Linear {
        down_ref: f64,
        rep_ref: f64,
        beta: f64,
    },
    Constant {
        matrices: BTreeMap<String, Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Deserialize)]
struct NumericsSchema {
    dx: f64,
    #[serde(default)]
    dt_policy: DtPolicySchema,
    horizon: f64,
    output_step: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DtPolicySchema {
    Named(String),
    Explicit { dt: f64 },
}

impl Default for DtPolicySchema {
    fn default() -> Self {
        Self::Named("cfl-equal".into())
    }
}

#[derive(Debug, Default, Deserialize)]
struct InitialSchema {
    #[serde(default)]
    queues: BTreeMap<String, f64>,
    #[serde(default)]
    densities: BTreeMap<String, Vec<f64>>,
}

/// Parse a scenario document. Structural problems (bad JSON, unknown ids,
/// missing processors) fail here; value-level violations are left for
/// validation.
pub fn scenario_from_str(text: &str) -> Result<Scenario, SchemaError> {
    let file: ScenarioFile = serde_json::from_str(text)?;

    let edge_triples: Vec<(u32, u32, u32)> = file
        .topology
        .edges
        .iter()
        .map(|e| (e.id, e.from, e.to))
        .collect();
    let topology = Topology::from_edges(&edge_triples).map_err(|e| semantic(e.to_string()))?;
    let n = topology.num_edges();
    if n == 0 {
        return Err(semantic("topology has no edges"));
    }

    let edge_index: BTreeMap<u32, usize> = topology
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id, i))
        .collect();
    let vertex_index: BTreeMap<u32, usize> = topology
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id, i))
        .collect();

    let mut processors = Vec::with_capacity(n);
    let mut capacities = Vec::with_capacity(n);
    let mut regimes = Vec::with_capacity(n);
    for e in &topology.edges {
        let p = file
            .processors
            .get(&e.id.to_string())
            .ok_or_else(|| semantic(format!("no processor entry for edge {}", e.id)))?;
        processors.push(Processor {
            a: p.a,
            length: p.length,
            velocity: p.velocity,
        });
        regimes.push(p.initial_regime.unwrap_or(p.capacities.len()));
        capacities.push(p.capacities.clone());
    }
    for key in file.processors.keys() {
        let id = parse_id(key, "processor")?;
        if !edge_index.contains_key(&id) {
            return Err(semantic(format!("processor entry for unknown edge {id}")));
        }
    }

    let mut distribution = vec![PiecewiseConstantSignal::constant(1.0); n];
    for (vkey, per_edge) in file.distribution {
        let vid = parse_id(&vkey, "distribution vertex")?;
        let &v = vertex_index
            .get(&vid)
            .ok_or_else(|| semantic(format!("distribution entry for unknown vertex {vid}")))?;
        for (ekey, sig) in per_edge {
            let eid = parse_id(&ekey, "distribution edge")?;
            let &e = edge_index
                .get(&eid)
                .ok_or_else(|| semantic(format!("distribution entry for unknown edge {eid}")))?;
            if !topology.vertices[v].outgoing.contains(&e) {
                return Err(semantic(format!(
                    "distribution at vertex {vid} names edge {eid}, which does not leave it"
                )));
            }
            distribution[e] = sig.into();
        }
    }

    let mut inflows = BTreeMap::new();
    for (vkey, sig) in file.inflows {
        let vid = parse_id(&vkey, "inflow vertex")?;
        let &v = vertex_index
            .get(&vid)
            .ok_or_else(|| semantic(format!("inflow at unknown vertex {vid}")))?;
        inflows.insert(v, sig.into());
    }

    let rates = match file.rates {
        RatesSchema::Linear {
            down_ref,
            rep_ref,
            beta,
        } => RateModelSpec::LinearLoadDependent {
            down_ref,
            rep_ref,
            beta,
        },
        RatesSchema::Constant { matrices } => {
            let mut per_edge = Vec::with_capacity(n);
            for e in &topology.edges {
                let m = matrices
                    .get(&e.id.to_string())
                    .ok_or_else(|| semantic(format!("no rate matrix for edge {}", e.id)))?;
                per_edge.push(m.clone());
            }
            for key in matrices.keys() {
                let id = parse_id(key, "rate matrix")?;
                if !edge_index.contains_key(&id) {
                    return Err(semantic(format!("rate matrix for unknown edge {id}")));
                }
            }
            RateModelSpec::ConstantMatrix { matrices: per_edge }
        }
    };

    let dt_policy = match file.numerics.dt_policy {
        DtPolicySchema::Named(name) if name == "cfl-equal" => DtPolicy::CflEqual,
        DtPolicySchema::Named(name) => {
            return Err(semantic(format!("unknown dt policy \"{name}\"")));
        }
        DtPolicySchema::Explicit { dt } => DtPolicy::Explicit(dt),
    };

    let dx = file.numerics.dx;
    let mut queues = vec![0.0; n];
    let mut densities: Vec<Vec<f64>> = topology
        .edges
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let cells = if dx > 0.0 {
                ((processors[i].length / dx).round() as usize).max(1)
            } else {
                1
            };
            vec![0.0; cells]
        })
        .collect();
    for (ekey, q) in file.initial.queues {
        let eid = parse_id(&ekey, "initial queue")?;
        let &e = edge_index
            .get(&eid)
            .ok_or_else(|| semantic(format!("initial queue for unknown edge {eid}")))?;
        queues[e] = q;
    }
    for (ekey, rho) in file.initial.densities {
        let eid = parse_id(&ekey, "initial density")?;
        let &e = edge_index
            .get(&eid)
            .ok_or_else(|| semantic(format!("initial density for unknown edge {eid}")))?;
        densities[e] = rho;
    }

    Ok(Scenario {
        topology,
        processors,
        capacities,
        distribution,
        inflows,
        rates,
        initial: InitialState {
            queues,
            densities,
            regimes,
        },
        horizon: file.numerics.horizon,
        dx,
        dt_policy,
        output_step: file.numerics.output_step,
    })
}

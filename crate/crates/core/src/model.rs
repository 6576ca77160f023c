//! Production network description: graph topology, processor parameters,
//! capacity tables, piecewise-constant signals and scenario validation.
//!
//! A network is a directed graph whose arcs are processors. Goods travel
//! through a processor at a fixed velocity, throughput is capped by the
//! processor's current capacity, and a queue in front of each processor
//! buffers whatever the processor cannot admit. All other modules consume
//! the immutable [`Scenario`] assembled here.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rates::RateModelSpec;

/// Relative tolerance for "divides exactly" and "sums to one" checks.
pub const EXACTNESS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(u32),
    #[error("edge {edge} references unknown vertex {vertex}")]
    UnknownVertex { edge: u32, vertex: u32 },
    #[error("signal evaluated at t = {t} outside [0, {horizon}]")]
    SignalDomain { t: f64, horizon: f64 },
    #[error("empty signal (no breakpoints)")]
    EmptySignal,
}

/// One directed arc of the network, indexed internally by position.
#[derive(Debug, Clone)]
pub struct EdgeTopo {
    /// External (file-level) identifier, kept for output labeling.
    pub id: u32,
    /// Internal index of the start vertex s(e).
    pub from: usize,
    /// Internal index of the end vertex.
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct VertexTopo {
    pub id: u32,
    /// Ingoing edge indices (delta_v^-).
    pub incoming: Vec<usize>,
    /// Outgoing edge indices (delta_v^+).
    pub outgoing: Vec<usize>,
}

/// Directed graph of processors with inflow/outflow vertex sets derived
/// from the edge lists.
#[derive(Debug, Clone)]
pub struct Topology {
    pub edges: Vec<EdgeTopo>,
    pub vertices: Vec<VertexTopo>,
    /// Vertices with no ingoing edges.
    pub inflow_vertices: Vec<usize>,
    /// Vertices with no outgoing edges.
    pub outflow_vertices: Vec<usize>,
}

impl Topology {
    /// Build a topology from `(edge id, from vertex id, to vertex id)` triples.
    ///
    /// Vertex ids may be arbitrary; internal indices follow ascending id order
    /// so construction is deterministic.
    pub fn from_edges(edges: &[(u32, u32, u32)]) -> Result<Self, ModelError> {
        let mut vertex_ids: Vec<u32> = edges.iter().flat_map(|&(_, f, t)| [f, t]).collect();
        vertex_ids.sort_unstable();
        vertex_ids.dedup();
        let index_of: BTreeMap<u32, usize> =
            vertex_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let mut seen = Vec::new();
        let mut edge_topos = Vec::with_capacity(edges.len());
        for &(id, from, to) in edges {
            if seen.contains(&id) {
                return Err(ModelError::DuplicateEdgeId(id));
            }
            seen.push(id);
            edge_topos.push(EdgeTopo {
                id,
                from: index_of[&from],
                to: index_of[&to],
            });
        }

        let mut vertices: Vec<VertexTopo> = vertex_ids
            .iter()
            .map(|&id| VertexTopo {
                id,
                incoming: Vec::new(),
                outgoing: Vec::new(),
            })
            .collect();
        for (e, topo) in edge_topos.iter().enumerate() {
            vertices[topo.from].outgoing.push(e);
            vertices[topo.to].incoming.push(e);
        }

        let inflow_vertices = vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.incoming.is_empty())
            .map(|(i, _)| i)
            .collect();
        let outflow_vertices = vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.outgoing.is_empty())
            .map(|(i, _)| i)
            .collect();

        Ok(Self {
            edges: edge_topos,
            vertices,
            inflow_vertices,
            outflow_vertices,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Whether the start vertex of `edge` is an inflow vertex.
    pub fn starts_at_inflow(&self, edge: usize) -> bool {
        self.vertices[self.edges[edge].from].incoming.is_empty()
    }

    /// Whether the end vertex of `edge` is an outflow vertex.
    pub fn ends_at_outflow(&self, edge: usize) -> bool {
        self.vertices[self.edges[edge].to].outgoing.is_empty()
    }

    /// Vertices not reachable from any inflow vertex (warning material).
    fn unreachable_vertices(&self) -> Vec<usize> {
        let mut reached = vec![false; self.vertices.len()];
        let mut stack: Vec<usize> = self.inflow_vertices.clone();
        for &v in &stack {
            reached[v] = true;
        }
        while let Some(v) = stack.pop() {
            for &e in &self.vertices[v].outgoing {
                let w = self.edges[e].to;
                if !reached[w] {
                    reached[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..self.vertices.len()).filter(|&v| !reached[v]).collect()
    }

    /// True if the directed graph contains a cycle.
    fn has_cycle(&self) -> bool {
        // 0 unvisited, 1 on stack, 2 done
        let mut mark = vec![0u8; self.vertices.len()];
        fn dfs(topo: &Topology, v: usize, mark: &mut [u8]) -> bool {
            mark[v] = 1;
            for &e in &topo.vertices[v].outgoing {
                let w = topo.edges[e].to;
                if mark[w] == 1 || (mark[w] == 0 && dfs(topo, w, mark)) {
                    return true;
                }
            }
            mark[v] = 2;
            false
        }
        (0..self.vertices.len()).any(|v| mark[v] == 0 && dfs(self, v, &mut mark))
    }
}

/// Spatial extent and processing velocity of one processor.
#[derive(Debug, Clone, Copy)]
pub struct Processor {
    /// Left interval endpoint a^e.
    pub a: f64,
    /// Interval length L^e = b^e - a^e.
    pub length: f64,
    /// Processing velocity v^e > 0.
    pub velocity: f64,
}

impl Processor {
    pub fn b(&self) -> f64 {
        self.a + self.length
    }
}

/// A right-continuous piecewise-constant function of time.
///
/// `values[k]` holds on `[breakpoints[k], breakpoints[k+1])`; the last value
/// extends to the end of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantSignal {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstantSignal {
    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![value],
        }
    }

    /// Build from `(t_k, value_k)` pairs; first breakpoint must be 0.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Self {
        Self {
            breakpoints,
            values,
        }
    }

    /// Evaluate at `t` within `[0, horizon]`.
    pub fn eval(&self, t: f64, horizon: f64) -> Result<f64, ModelError> {
        if self.breakpoints.is_empty() {
            return Err(ModelError::EmptySignal);
        }
        if t < 0.0 || t > horizon {
            return Err(ModelError::SignalDomain { t, horizon });
        }
        // index of the last breakpoint <= t
        let k = self.breakpoints.partition_point(|&b| b <= t);
        Ok(self.values[k.saturating_sub(1)])
    }

    /// Exact integral over `[0, horizon]`.
    pub fn integral(&self, horizon: f64) -> f64 {
        let mut total = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[k].min(horizon);
            let hi = if k + 1 < self.breakpoints.len() {
                self.breakpoints[k + 1].min(horizon)
            } else {
                horizon
            };
            if hi > lo {
                total += v * (hi - lo);
            }
        }
        total
    }

    /// Structural problems, reported with the given label.
    fn check(&self, label: &str, horizon: f64, violations: &mut Vec<String>) {
        if self.breakpoints.is_empty() {
            violations.push(format!("{label}: signal has no breakpoints"));
            return;
        }
        if self.breakpoints.len() != self.values.len() {
            violations.push(format!(
                "{label}: {} breakpoints but {} values",
                self.breakpoints.len(),
                self.values.len()
            ));
            return;
        }
        if self.breakpoints[0] != 0.0 {
            violations.push(format!(
                "{label}: first breakpoint is {}, must be 0",
                self.breakpoints[0]
            ));
        }
        for w in self.breakpoints.windows(2) {
            if w[1] <= w[0] {
                violations.push(format!(
                    "{label}: breakpoints not strictly increasing ({} then {})",
                    w[0], w[1]
                ));
            }
        }
        if let Some(&last) = self.breakpoints.last() {
            if last > horizon {
                violations.push(format!(
                    "{label}: breakpoint {last} beyond horizon {horizon}"
                ));
            }
        }
        for &v in &self.values {
            if !v.is_finite() || v < 0.0 {
                violations.push(format!("{label}: value {v} must be finite and >= 0"));
            }
        }
    }
}

/// Time-step selection for the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// Set dt to the CFL bound dx / max_e v^e.
    CflEqual,
    /// Explicit dt, validated against the CFL bound.
    Explicit(f64),
}

/// Initial hybrid state: queues, cell-averaged densities and regimes per edge.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub queues: Vec<f64>,
    /// Per edge, one value per grid cell (length m_e).
    pub densities: Vec<Vec<f64>>,
    /// Per edge, 1-based regime index into the capacity table.
    pub regimes: Vec<usize>,
}

/// Complete experiment description. Immutable once validated; safe to share
/// across worker threads.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub processors: Vec<Processor>,
    /// Capacity table per edge: mu^e(r) = capacities[e][r-1].
    pub capacities: Vec<Vec<f64>>,
    /// Distribution rate A^{s(e),e} per edge (constant 1 where the start
    /// vertex has a single outgoing edge).
    pub distribution: Vec<PiecewiseConstantSignal>,
    /// External inflow per inflow vertex (missing entries mean zero inflow).
    pub inflows: BTreeMap<usize, PiecewiseConstantSignal>,
    pub rates: RateModelSpec,
    pub initial: InitialState,
    pub horizon: f64,
    pub dx: f64,
    pub dt_policy: DtPolicy,
    pub output_step: f64,
}

impl Scenario {
    pub fn num_edges(&self) -> usize {
        self.topology.num_edges()
    }

    /// Largest capacity value of edge `e` over all regimes.
    pub fn mu_max(&self, e: usize) -> f64 {
        self.capacities[e].iter().copied().fold(0.0, f64::max)
    }

    /// Number of capacity states C^e.
    pub fn num_states(&self, e: usize) -> usize {
        self.capacities[e].len()
    }

    /// Cell count per edge at the scenario's dx (rounded; validation checks
    /// the remainder).
    pub fn cells(&self, e: usize) -> usize {
        ((self.processors[e].length / self.dx).round() as usize).max(1)
    }

    pub fn max_velocity(&self) -> f64 {
        self.processors
            .iter()
            .map(|p| p.velocity)
            .fold(0.0, f64::max)
    }

    /// CFL time-step bound dx / max_e v^e.
    pub fn cfl_dt(&self) -> f64 {
        self.dx / self.max_velocity()
    }

    /// The dt actually used by the solver under the scenario's policy.
    /// The CFL-equal value is nudged down so that v * dt <= dx holds in
    /// floating point, not just in exact arithmetic.
    pub fn dt(&self) -> f64 {
        match self.dt_policy {
            DtPolicy::CflEqual => {
                let v = self.max_velocity();
                let mut dt = self.cfl_dt();
                while v * dt > self.dx {
                    dt = f64::next_down(dt);
                }
                dt
            }
            DtPolicy::Explicit(dt) => dt,
        }
    }

    /// External inflow rate entering edge `e` at time `t`; zero for edges
    /// whose start vertex is internal.
    pub fn inflow_rate(&self, e: usize, t: f64) -> Result<f64, ModelError> {
        let v = self.topology.edges[e].from;
        match self.inflows.get(&v) {
            Some(sig) => sig.eval(t, self.horizon),
            None => Ok(0.0),
        }
    }

    /// A-priori queue bound q_e^max: initial queue plus everything the
    /// upstream side can possibly deliver over the horizon.
    pub fn queue_bound(&self, e: usize) -> f64 {
        let q0 = self.initial.queues[e];
        if self.topology.starts_at_inflow(e) {
            let v = self.topology.edges[e].from;
            let influx = self
                .inflows
                .get(&v)
                .map_or(0.0, |s| s.integral(self.horizon));
            q0 + influx
        } else {
            let upstream_cap: f64 = self.topology.vertices[self.topology.edges[e].from]
                .incoming
                .iter()
                .map(|&ein| self.mu_max(ein))
                .sum();
            q0 + upstream_cap * self.distribution[e].integral(self.horizon)
        }
    }

    /// A-priori density bound: v^e rho^e never exceeds this flux level.
    pub fn flux_bound(&self, e: usize) -> f64 {
        let v = self.processors[e].velocity;
        let rho0_max = self.initial.densities[e]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        (v * rho0_max).max(self.mu_max(e))
    }
}

/// Outcome of [`validate_scenario`]: violations block simulation, warnings
/// do not.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    /// CFL bound the solver will apply (dx / max velocity).
    pub cfl_dt_bound: f64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a scenario. Pure and idempotent:
/// all failures become report entries, never errors.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let n = s.num_edges();
    let horizon = s.horizon;

    if n == 0 {
        rep.violations.push("network has no edges".into());
        return rep;
    }
    if !(horizon > 0.0) {
        rep.violations
            .push(format!("horizon {horizon} must be positive"));
    }
    if !(s.dx > 0.0) {
        rep.violations.push(format!("dx {} must be positive", s.dx));
    }

    for e in 0..n {
        let id = s.topology.edges[e].id;
        let p = &s.processors[e];
        if !(p.velocity > 0.0) {
            rep.violations
                .push(format!("velocity must be positive on edge {id}"));
        }
        if !(p.length > 0.0) {
            rep.violations
                .push(format!("length must be positive on edge {id} (a < b)"));
        }
        if s.capacities[e].is_empty() {
            rep.violations
                .push(format!("edge {id} has an empty capacity table"));
        }
        for (r, &mu) in s.capacities[e].iter().enumerate() {
            if !mu.is_finite() || mu < 0.0 {
                rep.violations.push(format!(
                    "capacity mu({}) = {mu} on edge {id} must be finite and >= 0",
                    r + 1
                ));
            }
        }
        let r0 = s.initial.regimes[e];
        if r0 < 1 || r0 > s.num_states(e) {
            rep.violations.push(format!(
                "initial regime {r0} on edge {id} outside 1..={}",
                s.num_states(e)
            ));
        }
        if s.initial.queues[e] < 0.0 {
            rep.violations.push(format!(
                "initial queue {} on edge {id} must be >= 0",
                s.initial.queues[e]
            ));
        }
        if s.dx > 0.0 && p.length > 0.0 {
            let ratio = p.length / s.dx;
            let m = ratio.round();
            if m < 1.0 || (ratio - m).abs() > EXACTNESS_TOL * ratio.max(1.0) {
                rep.violations.push(format!(
                    "dx {} does not divide length {} of edge {id} (ratio {ratio})",
                    s.dx, p.length
                ));
            } else if s.initial.densities[e].len() != m as usize {
                rep.violations.push(format!(
                    "edge {id}: {} initial density cells, grid has {}",
                    s.initial.densities[e].len(),
                    m as usize
                ));
            }
        }
        for &rho in &s.initial.densities[e] {
            if !rho.is_finite() || rho < 0.0 {
                rep.violations.push(format!(
                    "initial density {rho} on edge {id} must be finite and >= 0"
                ));
            }
        }
        s.distribution[e].check(
            &format!("distribution rate for edge {id}"),
            horizon,
            &mut rep.violations,
        );
        for &a in &s.distribution[e].values {
            if a > 1.0 {
                rep.violations.push(format!(
                    "distribution rate {a} for edge {id} exceeds 1"
                ));
            }
        }
    }

    for (&v, sig) in &s.inflows {
        let vid = s.topology.vertices[v].id;
        sig.check(&format!("inflow at vertex {vid}"), horizon, &mut rep.violations);
        if !s.inflow_vertices_contains(v) {
            rep.violations.push(format!(
                "inflow prescribed at vertex {vid}, which has ingoing edges"
            ));
        }
    }

    // Distribution rates must sum to 1 across each vertex's outgoing edges,
    // at every breakpoint and on a uniform sample of the horizon.
    if horizon > 0.0 {
        for (v, vt) in s.topology.vertices.iter().enumerate() {
            if vt.outgoing.is_empty() {
                continue;
            }
            let mut probe_times: Vec<f64> = (0..1000).map(|k| horizon * k as f64 / 999.0).collect();
            for &e in &vt.outgoing {
                probe_times.extend_from_slice(&s.distribution[e].breakpoints);
            }
            let mut worst: Option<(f64, f64)> = None;
            for &t in &probe_times {
                if !(0.0..=horizon).contains(&t) {
                    continue;
                }
                let sum: f64 = vt
                    .outgoing
                    .iter()
                    .map(|&e| s.distribution[e].eval(t, horizon).unwrap_or(f64::NAN))
                    .sum();
                if (sum - 1.0).abs() > EXACTNESS_TOL
                    && worst.map_or(true, |(w, _)| (sum - 1.0).abs() > (w - 1.0).abs())
                {
                    worst = Some((sum, t));
                }
            }
            if let Some((sum, t)) = worst {
                rep.violations.push(format!(
                    "distribution rates sum {sum} != 1 at vertex {} (t = {t})",
                    vt.id
                ));
            }
            let _ = v;
        }
    }

    if s.dx > 0.0 {
        rep.cfl_dt_bound = s.cfl_dt();
        if let DtPolicy::Explicit(dt) = s.dt_policy {
            if !(dt > 0.0) {
                rep.violations.push(format!("dt {dt} must be positive"));
            } else if dt > rep.cfl_dt_bound * (1.0 + EXACTNESS_TOL) {
                rep.violations.push(format!(
                    "dt {dt} violates the CFL bound {}",
                    rep.cfl_dt_bound
                ));
            }
        }
    }

    if !(s.output_step > 0.0) {
        rep.violations
            .push(format!("output step {} must be positive", s.output_step));
    } else if horizon > 0.0 {
        let ratio = horizon / s.output_step;
        if (ratio - ratio.round()).abs() > EXACTNESS_TOL * ratio.max(1.0) {
            rep.violations.push(format!(
                "output step {} does not divide horizon {horizon}",
                s.output_step
            ));
        }
    }

    s.rates.validate(s, &mut rep.violations);

    if s.topology.inflow_vertices.is_empty() {
        rep.warnings
            .push("network has no inflow vertex; only initial mass circulates".into());
    }
    for &v in &s.topology.inflow_vertices {
        if s.topology.vertices[v].outgoing.len() > 1 && s.inflows.contains_key(&v) {
            rep.warnings.push(format!(
                "inflow vertex {} has {} outgoing edges; the external inflow feeds each of them in full",
                s.topology.vertices[v].id,
                s.topology.vertices[v].outgoing.len()
            ));
        }
    }
    for v in s.topology.unreachable_vertices() {
        rep.warnings.push(format!(
            "vertex {} is not reachable from any inflow vertex",
            s.topology.vertices[v].id
        ));
    }
    if s.topology.has_cycle() {
        rep.warnings
            .push("topology contains a directed cycle".into());
    }

    rep
}

impl Scenario {
    fn inflow_vertices_contains(&self, v: usize) -> bool {
        self.topology.inflow_vertices.contains(&v)
    }
}

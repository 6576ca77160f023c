//! Deterministic network evolution at frozen capacities: left-sided upwind
//! for each processor density, forward Euler for each queue, coupled through
//! the vertex conditions.
//!
//! The per-step ordering is fixed: exit fluxes from the current densities,
//! then queue inflows, then queue release rates, then the Euler queue update,
//! then the density update whose boundary flux is the release rate. Downstream
//! edges therefore see exit fluxes computed from pre-update densities.
//!
//! Time labels are always computed as `anchor + k * dt`, never accumulated
//! step by step; this keeps grid-aligned evolutions bitwise reproducible no
//! matter how they are split.

use thiserror::Error;

use crate::model::{Scenario, EXACTNESS_TOL};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("CFL violated: v*dt = {vdt} exceeds dx = {dx}")]
    CflViolation { vdt: f64, dx: f64 },
    #[error("evolution target {to} precedes state time {from}")]
    TimeReversed { from: f64, to: f64 },
    #[error("states live on different grids")]
    GridMismatch,
}

/// Relative tolerance on time comparisons when deciding whether a target
/// lies on the step grid.
const TIME_TOL: f64 = 1e-9;

/// Discretization: cell counts per edge, one global cell width and time step.
#[derive(Debug, Clone)]
pub struct Grid {
    pub cells: Vec<usize>,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(sc: &Scenario) -> Result<Self, SolverError> {
        let dt = sc.dt();
        let vdt = sc.max_velocity() * dt;
        if vdt > sc.dx * (1.0 + EXACTNESS_TOL) {
            return Err(SolverError::CflViolation { vdt, dx: sc.dx });
        }
        Ok(Self {
            cells: (0..sc.num_edges()).map(|e| sc.cells(e)).collect(),
            dx: sc.dx,
            dt,
        })
    }
}

/// Deterministic part of the system state: per-edge queue and density grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub time: f64,
    pub queues: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
}

impl NetworkState {
    /// Initial state prescribed by the scenario.
    pub fn initial(sc: &Scenario) -> Self {
        Self {
            time: 0.0,
            queues: sc.initial.queues.clone(),
            densities: sc.initial.densities.clone(),
        }
    }

    /// All-zero state on the scenario's grid.
    pub fn zeros(sc: &Scenario, grid: &Grid) -> Self {
        Self {
            time: 0.0,
            queues: vec![0.0; sc.num_edges()],
            densities: grid.cells.iter().map(|&m| vec![0.0; m]).collect(),
        }
    }

    /// Total goods content: queues plus cell-integrated densities.
    pub fn mass(&self, dx: f64) -> f64 {
        let mut total = 0.0;
        for (q, rho) in self.queues.iter().zip(&self.densities) {
            total += q + dx * rho.iter().sum::<f64>();
        }
        total
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.queues.len() == other.queues.len()
            && self
                .densities
                .iter()
                .zip(&other.densities)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Per-step boundary fluxes plus running totals of what entered and left the
/// network. The per-edge vectors always hold the most recent step.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxLedger {
    /// Queue inflow g_in^e of the last step.
    pub g_in: Vec<f64>,
    /// Queue release (processor injection) g_out^e of the last step.
    pub g_out: Vec<f64>,
    /// Exit flux f^e at b^e of the last step, from pre-update densities.
    pub exit: Vec<f64>,
    /// Accumulated outflow over edges ending at outflow vertices.
    pub outflow_acc: f64,
    /// Accumulated external inflow over edges starting at inflow vertices.
    pub inflow_acc: f64,
}

impl FluxLedger {
    pub fn new(num_edges: usize) -> Self {
        Self {
            g_in: vec![0.0; num_edges],
            g_out: vec![0.0; num_edges],
            exit: vec![0.0; num_edges],
            outflow_acc: 0.0,
            inflow_acc: 0.0,
        }
    }
}

/// Transport flux through a processor: min(v * rho, mu).
#[inline]
pub fn flux(rho: f64, mu: f64, v: f64) -> f64 {
    debug_assert!(rho >= 0.0 && mu >= 0.0 && v > 0.0);
    (v * rho).min(mu)
}

/// Queue release rate: the two-branch rule of the continuous model with a
/// discrete limiter. When the queue cannot sustain the capacity for a full
/// step it drains exactly to zero instead of going negative.
#[inline]
pub fn compute_g_out(q: f64, g_in: f64, mu: f64, dt: f64) -> f64 {
    debug_assert!(q >= 0.0 && g_in >= 0.0 && mu >= 0.0 && dt > 0.0);
    mu.min(g_in + q / dt)
}

/// Queue inflows for every edge: the external inflow at inflow vertices,
/// otherwise the distribution-weighted sum of upstream exit fluxes.
pub fn compute_g_in(
    exit_fluxes: &[f64],
    t: f64,
    sc: &Scenario,
) -> Result<Vec<f64>, crate::model::ModelError> {
    let mut out = vec![0.0; sc.num_edges()];
    g_in_into(exit_fluxes, t, sc, &mut out)?;
    Ok(out)
}

fn g_in_into(
    exit_fluxes: &[f64],
    t: f64,
    sc: &Scenario,
    out: &mut [f64],
) -> Result<(), crate::model::ModelError> {
    for e in 0..sc.num_edges() {
        out[e] = if sc.topology.starts_at_inflow(e) {
            sc.inflow_rate(e, t)?
        } else {
            let weight = sc.distribution[e].eval(t, sc.horizon)?;
            let upstream: f64 = sc.topology.vertices[sc.topology.edges[e].from]
                .incoming
                .iter()
                .map(|&ein| exit_fluxes[ein])
                .sum();
            weight * upstream
        };
    }
    Ok(())
}

/// One upwind finite-volume step on a single edge. Returns the updated
/// density vector and the exit flux at b^e taken from the pre-update state.
pub fn upwind_edge_step(
    rho: &[f64],
    boundary_flux: f64,
    mu: f64,
    v: f64,
    dt: f64,
    dx: f64,
) -> Result<(Vec<f64>, f64), SolverError> {
    if v * dt > dx * (1.0 + EXACTNESS_TOL) {
        return Err(SolverError::CflViolation { vdt: v * dt, dx });
    }
    let mut out = rho.to_vec();
    let exit = upwind_step_inplace(&mut out, boundary_flux, mu, v, dt, dx);
    Ok((out, exit))
}

/// In-place upwind update, sweeping right to left so each cell reads its
/// left neighbour's pre-update value. Cells are clamped at zero: under the
/// CFL condition the update is nonnegative in exact arithmetic, but rounding
/// can undershoot by an ulp.
#[inline]
fn upwind_step_inplace(rho: &mut [f64], boundary_flux: f64, mu: f64, v: f64, dt: f64, dx: f64) -> f64 {
    debug_assert!(v * dt <= dx * (1.0 + EXACTNESS_TOL));
    let m = rho.len();
    let r = dt / dx;
    let exit = flux(rho[m - 1], mu, v);
    for j in (1..m).rev() {
        rho[j] = (rho[j] - r * (flux(rho[j], mu, v) - flux(rho[j - 1], mu, v))).max(0.0);
    }
    rho[0] = (rho[0] - r * (flux(rho[0], mu, v) - boundary_flux)).max(0.0);
    exit
}

/// One coupled network step of size `dt`, signals evaluated at the state's
/// current time. Leaves `state.time` untouched; callers assign labels.
pub(crate) fn step_network(
    state: &mut NetworkState,
    caps: &[f64],
    dt: f64,
    sc: &Scenario,
    ledger: &mut FluxLedger,
) {
    let t = state.time;
    let n = sc.num_edges();

    for e in 0..n {
        let p = &sc.processors[e];
        let rho = &state.densities[e];
        ledger.exit[e] = flux(rho[rho.len() - 1], caps[e], p.velocity);
    }

    // Signals are validated over [0, horizon]; commits never step past the
    // horizon, so evaluation cannot fail here.
    {
        let (g_in, exit) = (&mut ledger.g_in, &ledger.exit);
        g_in_into(exit, t.min(sc.horizon), sc, g_in).expect("signal domain");
    }

    for e in 0..n {
        let g_in = ledger.g_in[e];
        let g_out = compute_g_out(state.queues[e], g_in, caps[e], dt);
        ledger.g_out[e] = g_out;
        state.queues[e] = (state.queues[e] + dt * (g_in - g_out)).max(0.0);
        let p = &sc.processors[e];
        upwind_step_inplace(
            &mut state.densities[e],
            g_out,
            caps[e],
            p.velocity,
            dt,
            sc.dx,
        );
    }

    let mut out_step = 0.0;
    let mut in_step = 0.0;
    for e in 0..n {
        if sc.topology.ends_at_outflow(e) {
            out_step += ledger.exit[e];
        }
        if sc.topology.starts_at_inflow(e) {
            in_step += ledger.g_in[e];
        }
    }
    ledger.outflow_acc += dt * out_step;
    ledger.inflow_acc += dt * in_step;
}

/// Advance `state` in place to `t1`: full steps of `grid.dt` from the state's
/// current time, then one truncated step landing exactly on `t1`.
pub(crate) fn advance_in_place(
    state: &mut NetworkState,
    caps: &[f64],
    t1: f64,
    sc: &Scenario,
    grid: &Grid,
    ledger: &mut FluxLedger,
) -> Result<(), SolverError> {
    let dt = grid.dt;
    let tol = dt * TIME_TOL;
    let t0 = state.time;
    if t1 < t0 - tol {
        return Err(SolverError::TimeReversed { from: t0, to: t1 });
    }
    let mut k: u64 = 0;
    loop {
        let t_next = t0 + (k + 1) as f64 * dt;
        if t_next > t1 + tol {
            break;
        }
        step_network(state, caps, dt, sc, ledger);
        state.time = t_next;
        k += 1;
    }
    let rem = t1 - state.time;
    if rem > tol {
        step_network(state, caps, rem, sc, ledger);
    }
    state.time = t1;
    Ok(())
}

/// Deterministic semigroup at frozen regimes: evolve `state` to `t1` and
/// accumulate boundary fluxes into `ledger`.
pub fn evolve(
    state: &NetworkState,
    regimes: &[usize],
    t1: f64,
    sc: &Scenario,
    grid: &Grid,
    ledger: &mut FluxLedger,
) -> Result<NetworkState, SolverError> {
    let caps: Vec<f64> = regimes
        .iter()
        .enumerate()
        .map(|(e, &r)| sc.capacities[e][r - 1])
        .collect();
    let mut out = state.clone();
    advance_in_place(&mut out, &caps, t1, sc, grid, ledger)?;
    Ok(out)
}

/// Network norm distance: sum over edges of the discrete L1 density distance
/// plus the queue distance.
pub fn l1_distance(a: &NetworkState, b: &NetworkState, dx: f64) -> Result<f64, SolverError> {
    if !a.same_shape(b) {
        return Err(SolverError::GridMismatch);
    }
    let mut total = 0.0;
    for e in 0..a.queues.len() {
        let rho_dist: f64 = a.densities[e]
            .iter()
            .zip(&b.densities[e])
            .map(|(x, y)| (x - y).abs())
            .sum();
        total += dx * rho_dist + (a.queues[e] - b.queues[e]).abs();
    }
    Ok(total)
}

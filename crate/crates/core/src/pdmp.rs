//! Sample paths of the load-dependent network: the marked point process of
//! regime jumps is generated by thinning against a dominating Poisson
//! process, and the deterministic dynamics is stitched between jumps.
//!
//! Between candidate times the deterministic state advances incrementally
//! (full solver steps anchored at the last jump), and off-step evaluation
//! points are probed with one truncated step that is never committed. A
//! committed trajectory between two jumps is therefore bitwise identical to
//! a single fresh solver evolution over the same span.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::measures::{GridSample, PathRecord};
use crate::model::Scenario;
use crate::rates::{self, RateBounds, RateModelSpec};
use crate::solver::{self, flux, FluxLedger, Grid, NetworkState, SolverError};

/// Relative slack on the bound check: the per-edge rate laws reach their
/// suprema only up to rounding, so psi may exceed the bound by a few ulps
/// without invalidating it.
const BOUND_SLACK: f64 = 1e-9;

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PathError {
    #[error(
        "rate bound violated{} at t = {time}: psi = {psi} > {bound}",
        path_index.map(|i| format!(" on path {i}")).unwrap_or_default()
    )]
    BoundViolation {
        time: f64,
        psi: f64,
        bound: f64,
        path_index: Option<u64>,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Full hybrid state: discrete regimes plus the continuous network state.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    /// Per edge, 1-based regime index.
    pub regimes: Vec<usize>,
    pub network: NetworkState,
}

impl HybridState {
    pub fn initial(sc: &Scenario) -> Self {
        Self {
            regimes: sc.initial.regimes.clone(),
            network: NetworkState::initial(sc),
        }
    }

    pub fn time(&self) -> f64 {
        self.network.time
    }

    /// Realized capacity vector mu(r).
    pub fn capacities(&self, sc: &Scenario) -> Vec<f64> {
        self.regimes
            .iter()
            .enumerate()
            .map(|(e, &r)| sc.capacities[e][r - 1])
            .collect()
    }
}

/// One regime flip of the marked point process.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub edge: usize,
    pub from: usize,
    pub to: usize,
}

/// Seedable uniform stream with independent substreams per path index.
/// Identical `(seed, path_index)` reproduces the identical draw sequence
/// regardless of scheduling.
pub struct RngStream {
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn for_path(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self { rng }
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential variate by inverse transform, -ln(1 - U) / rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let u = self.uniform();
        -f64::ln_1p(-u) / rate
    }
}

/// Outcome of the thinning loop for one inter-jump segment.
#[derive(Debug)]
pub enum NextJump {
    /// A jump was accepted; `state` is the deterministic state at the jump
    /// time with the pre-jump regimes.
    Jump { state: HybridState },
    /// No jump before the horizon; `state` is the state at the horizon.
    HorizonReached { state: HybridState },
}

/// Incremental deterministic flow for one path. The committed stream takes
/// full solver steps anchored at the last jump; probes apply one truncated
/// step on scratch buffers. Crossing an output-grid time records a sample.
struct SegmentRunner<'a> {
    sc: &'a Scenario,
    grid: &'a Grid,
    regimes: Vec<usize>,
    caps: Vec<f64>,
    anchor: f64,
    steps: u64,
    state: NetworkState,
    ledger: FluxLedger,
    probe_state: NetworkState,
    probe_ledger: FluxLedger,
    outputs: &'a [f64],
    next_out: usize,
    samples: Vec<GridSample>,
}

impl<'a> SegmentRunner<'a> {
    fn new(y0: HybridState, sc: &'a Scenario, grid: &'a Grid, outputs: &'a [f64]) -> Self {
        let caps = y0.capacities(sc);
        let anchor = y0.time();
        let n = sc.num_edges();
        let probe_state = y0.network.clone();
        Self {
            sc,
            grid,
            regimes: y0.regimes,
            caps,
            anchor,
            steps: 0,
            state: y0.network,
            ledger: FluxLedger::new(n),
            probe_state,
            probe_ledger: FluxLedger::new(n),
            outputs,
            next_out: 0,
            samples: Vec::with_capacity(outputs.len()),
        }
    }

    fn tol(&self) -> f64 {
        self.grid.dt * TIME_TOL
    }

    fn capture(&mut self, committed: bool, label: f64) {
        let (st, ledger) = if committed {
            (&self.state, &self.ledger)
        } else {
            (&self.probe_state, &self.probe_ledger)
        };
        let n = self.sc.num_edges();
        let mut s = GridSample {
            time: label,
            regime: Vec::with_capacity(n),
            capacity: Vec::with_capacity(n),
            queue: Vec::with_capacity(n),
            ur: Vec::with_capacity(n),
            rwip: Vec::with_capacity(n),
            exit_flux: Vec::with_capacity(n),
            vrho_max: Vec::with_capacity(n),
            outflow_acc: ledger.outflow_acc,
            inflow_acc: ledger.inflow_acc,
            mass: st.mass(self.sc.dx),
        };
        for e in 0..n {
            let p = &self.sc.processors[e];
            s.regime.push(self.regimes[e] as u32);
            s.capacity.push(self.caps[e]);
            s.queue.push(st.queues[e]);
            s.ur.push(rates::ur(st, &self.regimes, e, self.sc));
            s.rwip.push(rates::rwip(st, e, self.sc));
            s.exit_flux
                .push(flux(*st.densities[e].last().unwrap(), self.caps[e], p.velocity));
            s.vrho_max.push(
                st.densities[e]
                    .iter()
                    .map(|&rho| p.velocity * rho)
                    .fold(0.0, f64::max),
            );
        }
        self.samples.push(s);
    }

    /// Probe-record every pending output time strictly below `t`.
    fn record_outputs_below(&mut self, t: f64) {
        let tol = self.tol();
        while self.next_out < self.outputs.len() && self.outputs[self.next_out] < t {
            let t_k = self.outputs[self.next_out];
            let rem = t_k - self.state.time;
            if rem > tol {
                self.probe_state.clone_from(&self.state);
                self.probe_ledger.clone_from(&self.ledger);
                solver::step_network(
                    &mut self.probe_state,
                    &self.caps,
                    rem,
                    self.sc,
                    &mut self.probe_ledger,
                );
                self.capture(false, t_k);
            } else {
                self.capture(true, t_k);
            }
            self.next_out += 1;
        }
    }

    /// Record pending outputs that coincide with the committed time.
    fn record_outputs_due(&mut self) {
        let limit = self.state.time + self.tol();
        while self.next_out < self.outputs.len() && self.outputs[self.next_out] <= limit {
            let t_k = self.outputs[self.next_out];
            self.capture(true, t_k);
            self.next_out += 1;
        }
    }

    /// Advance the committed stream with full steps while the next step label
    /// stays at or below `t`, recording crossed outputs on the way.
    fn advance_committed(&mut self, t: f64) {
        let dt = self.grid.dt;
        let tol = self.tol();
        loop {
            let t_next = self.anchor + (self.steps + 1) as f64 * dt;
            if t_next > t + tol {
                break;
            }
            self.record_outputs_below(t_next - tol);
            solver::step_network(&mut self.state, &self.caps, dt, self.sc, &mut self.ledger);
            self.steps += 1;
            self.state.time = t_next;
            self.record_outputs_due();
        }
        self.record_outputs_below(t - tol);
    }

    /// Aggregate jump rate of the deterministic state probed at `t`, without
    /// committing the truncated step.
    fn probe_psi(&mut self, t: f64, spec: &RateModelSpec) -> f64 {
        self.advance_committed(t);
        self.probe_state.clone_from(&self.state);
        self.probe_ledger.clone_from(&self.ledger);
        let rem = t - self.probe_state.time;
        if rem > self.tol() {
            solver::step_network(
                &mut self.probe_state,
                &self.caps,
                rem,
                self.sc,
                &mut self.probe_ledger,
            );
        }
        self.probe_state.time = t;
        (0..self.sc.num_edges())
            .map(|e| rates::rate_row_sum(spec, e, self.regimes[e], t, &self.probe_state, self.sc))
            .sum()
    }

    /// Land the committed stream exactly on `t` and re-anchor there.
    fn commit(&mut self, t: f64) {
        self.advance_committed(t);
        let rem = t - self.state.time;
        if rem > self.tol() {
            solver::step_network(&mut self.state, &self.caps, rem, self.sc, &mut self.ledger);
        }
        self.state.time = t;
        self.anchor = t;
        self.steps = 0;
    }

    fn apply_flip(&mut self, edge: usize, to: usize) {
        self.regimes[edge] = to;
        self.caps[edge] = self.sc.capacities[edge][to - 1];
    }

    fn hybrid(&self) -> HybridState {
        HybridState {
            regimes: self.regimes.clone(),
            network: self.state.clone(),
        }
    }
}

/// Thinning loop over one segment. On acceptance the runner is committed at
/// the jump time with regimes still pre-jump; on horizon exhaustion the
/// runner is committed at the horizon.
fn run_segment(
    runner: &mut SegmentRunner,
    bound: &RateBounds,
    spec: &RateModelSpec,
    sc: &Scenario,
    rng: &mut RngStream,
    candidate_draws: &mut u64,
) -> Result<Option<f64>, PathError> {
    let horizon = sc.horizon;
    if bound.total <= 0.0 {
        runner.commit(horizon);
        return Ok(None);
    }
    let mut s = runner.anchor;
    loop {
        s += rng.exponential(bound.total);
        if s > horizon {
            runner.commit(horizon);
            return Ok(None);
        }
        *candidate_draws += 1;
        let psi_val = runner.probe_psi(s, spec);
        if psi_val > bound.total * (1.0 + BOUND_SLACK) {
            return Err(PathError::BoundViolation {
                time: s,
                psi: psi_val,
                bound: bound.total,
                path_index: None,
            });
        }
        let u = rng.uniform();
        if u <= psi_val / bound.total {
            runner.commit(s);
            return Ok(Some(s));
        }
    }
}

/// Sample the next jump time by thinning, starting from `y` at its own time.
/// Returns the deterministic state at the accepted time (regimes unchanged),
/// or the state at the horizon when no candidate is accepted.
pub fn next_jump(
    y: &HybridState,
    bound: &RateBounds,
    spec: &RateModelSpec,
    sc: &Scenario,
    grid: &Grid,
    rng: &mut RngStream,
) -> Result<NextJump, PathError> {
    let mut runner = SegmentRunner::new(y.clone(), sc, grid, &[]);
    let mut draws = 0;
    match run_segment(&mut runner, bound, spec, sc, rng, &mut draws)? {
        Some(_) => Ok(NextJump::Jump {
            state: runner.hybrid(),
        }),
        None => Ok(NextJump::HorizonReached {
            state: runner.hybrid(),
        }),
    }
}

/// Draw the flipped coordinate of the post-jump kernel: a categorical choice
/// over all (edge, target regime) pairs weighted by their transition rates.
fn sample_flip(
    t: f64,
    regimes: &[usize],
    net: &NetworkState,
    spec: &RateModelSpec,
    sc: &Scenario,
    rng: &mut RngStream,
) -> (usize, usize) {
    let mut total = 0.0;
    for e in 0..sc.num_edges() {
        total += rates::rate_row_sum(spec, e, regimes[e], t, net, sc);
    }
    assert!(
        total > 0.0,
        "post-jump kernel sampled at aggregate rate zero"
    );
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut fallback = None;
    for e in 0..sc.num_edges() {
        for l in 1..=sc.num_states(e) {
            if l == regimes[e] {
                continue;
            }
            let w = rates::rate(spec, e, regimes[e], l, t, net, sc);
            if w > 0.0 {
                acc += w;
                fallback = Some((e, l));
                if target < acc {
                    return (e, l);
                }
            }
        }
    }
    // Rounding can leave `target` a hair past the final cumulative weight.
    fallback.expect("positive aggregate rate with no positive entry")
}

/// Post-jump state: exactly one regime coordinate flips, the continuous
/// components pass through unchanged.
pub fn sample_post_jump(
    t: f64,
    y: &HybridState,
    spec: &RateModelSpec,
    sc: &Scenario,
    rng: &mut RngStream,
) -> HybridState {
    let (edge, to) = sample_flip(t, &y.regimes, &y.network, spec, sc, rng);
    let mut out = y.clone();
    out.regimes[edge] = to;
    out
}

/// Output-grid times `0, step, 2*step, ..., horizon`, with the final point
/// pinned to the horizon exactly.
pub fn output_times(horizon: f64, step: f64) -> Vec<f64> {
    let n = (horizon / step).round() as usize;
    (0..=n)
        .map(|k| if k == n { horizon } else { k as f64 * step })
        .collect()
}

/// Simulate one complete path: alternate thinning and post-jump sampling
/// until the horizon, recording grid samples and the exact event list.
pub fn simulate_path(
    sc: &Scenario,
    grid: &Grid,
    bound: &RateBounds,
    seed: u64,
    path_index: u64,
    outputs: &[f64],
) -> Result<PathRecord, PathError> {
    let mut rng = RngStream::for_path(seed, path_index);
    let mut runner = SegmentRunner::new(HybridState::initial(sc), sc, grid, outputs);
    runner.record_outputs_due();

    let mut events = Vec::new();
    let mut candidate_draws: u64 = 0;
    loop {
        let accepted = run_segment(
            &mut runner,
            bound,
            &sc.rates,
            sc,
            &mut rng,
            &mut candidate_draws,
        )
        .map_err(|e| match e {
            PathError::BoundViolation {
                time, psi, bound, ..
            } => PathError::BoundViolation {
                time,
                psi,
                bound,
                path_index: Some(path_index),
            },
            other => other,
        })?;
        match accepted {
            None => {
                runner.record_outputs_due();
                break;
            }
            Some(t) => {
                let (edge, to) =
                    sample_flip(t, &runner.regimes, &runner.state, &sc.rates, sc, &mut rng);
                let from = runner.regimes[edge];
                runner.apply_flip(edge, to);
                events.push(JumpEvent {
                    time: t,
                    edge,
                    from,
                    to,
                });
                runner.record_outputs_due();
            }
        }
    }
    debug_assert_eq!(runner.samples.len(), outputs.len());
    Ok(PathRecord::from_samples(
        runner.samples,
        events,
        candidate_draws,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::uniform_bound;
    use crate::solver::evolve;
    use crate::testkit::{constant_rate_spec, single_edge_scenario};

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let mut a = RngStream::for_path(7, 3);
        let mut b = RngStream::for_path(7, 3);
        let mut c = RngStream::for_path(7, 4);
        let mut any_diff = false;
        for _ in 0..256 {
            let (x, y, z) = (a.uniform(), b.uniform(), c.uniform());
            assert_eq!(x, y);
            assert!((0.0..1.0).contains(&x));
            any_diff |= x != z;
        }
        assert!(any_diff, "distinct path indices must give distinct streams");
    }

    #[test]
    fn tight_bound_accepts_first_candidate() {
        let mut sc = single_edge_scenario();
        let lambda = 1.3;
        sc.rates = constant_rate_spec(1, lambda);
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        assert_eq!(bound.total, lambda);

        for path in 0..50 {
            let mut rng = RngStream::for_path(99, path);
            let y0 = HybridState::initial(&sc);
            let jump = next_jump(&y0, &bound, &sc.rates, &sc, &grid, &mut rng).unwrap();
            // replay the stream: the first accepted time is exactly xi_1
            let mut replay = RngStream::for_path(99, path);
            let xi = replay.exponential(lambda);
            match jump {
                NextJump::Jump { state } => assert_eq!(state.time(), xi),
                NextJump::HorizonReached { .. } => assert!(xi > sc.horizon),
            }
        }
    }

    #[test]
    fn zero_rates_reach_horizon_without_jumps() {
        let mut sc = single_edge_scenario();
        sc.rates = constant_rate_spec(1, 0.0);
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        let mut rng = RngStream::for_path(1, 0);
        let y0 = HybridState::initial(&sc);
        match next_jump(&y0, &bound, &sc.rates, &sc, &grid, &mut rng).unwrap() {
            NextJump::HorizonReached { state } => assert_eq!(state.time(), sc.horizon),
            NextJump::Jump { .. } => panic!("jump sampled at rate zero"),
        }
    }

    #[test]
    fn accepted_state_matches_fresh_evolution() {
        let sc = single_edge_scenario();
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        let mut rng = RngStream::for_path(5, 2);
        let mut y = HybridState::initial(&sc);
        for _ in 0..12 {
            match next_jump(&y, &bound, &sc.rates, &sc, &grid, &mut rng).unwrap() {
                NextJump::Jump { state } => {
                    let mut ledger = FluxLedger::new(1);
                    let fresh = evolve(
                        &y.network,
                        &y.regimes,
                        state.time(),
                        &sc,
                        &grid,
                        &mut ledger,
                    )
                    .unwrap();
                    assert_eq!(fresh, state.network, "stepper drifted from the semigroup");
                    y = sample_post_jump(state.time(), &state, &sc.rates, &sc, &mut rng);
                    assert_eq!(y.network, state.network);
                }
                NextJump::HorizonReached { .. } => break,
            }
        }
    }

    #[test]
    fn post_jump_flips_exactly_one_regime() {
        let sc = single_edge_scenario();
        let grid = Grid::new(&sc).unwrap();
        let y = HybridState {
            regimes: vec![2],
            network: NetworkState::zeros(&sc, &grid),
        };
        let mut rng = RngStream::for_path(3, 0);
        let post = sample_post_jump(0.5, &y, &sc.rates, &sc, &mut rng);
        assert_eq!(post.regimes, vec![1]);
        assert_eq!(post.network, y.network);
    }

    #[test]
    fn post_jump_weights_follow_rates() {
        // Two edges with constant failure rates 1 and 3: edge 2 flips with
        // probability 3/4.
        let mut sc = crate::testkit::chain_scenario(2);
        sc.rates = RateModelSpec::ConstantMatrix {
            matrices: vec![
                vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.0, 0.0], vec![3.0, 0.0]],
            ],
        };
        let grid = Grid::new(&sc).unwrap();
        let y = HybridState {
            regimes: vec![2, 2],
            network: NetworkState::zeros(&sc, &grid),
        };
        let mut rng = RngStream::for_path(17, 0);
        let n = 10_000;
        let mut edge2 = 0;
        for _ in 0..n {
            let post = sample_post_jump(0.0, &y, &sc.rates, &sc, &mut rng);
            let flipped: Vec<usize> = (0..2).filter(|&e| post.regimes[e] != 2).collect();
            assert_eq!(flipped.len(), 1);
            if flipped[0] == 1 {
                edge2 += 1;
            }
        }
        let freq = edge2 as f64 / n as f64;
        // 3 sigma of a Bernoulli(0.75) mean over 10^4 draws
        assert!((freq - 0.75).abs() < 0.013, "flip frequency {freq}");
    }

    #[test]
    fn paths_are_deterministic_per_seed_and_index() {
        let sc = single_edge_scenario();
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        let outputs = output_times(sc.horizon, sc.output_step);
        let a = simulate_path(&sc, &grid, &bound, 11, 4, &outputs).unwrap();
        let b = simulate_path(&sc, &grid, &bound, 11, 4, &outputs).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.queue, b.queue);
        assert_eq!(a.outflow, b.outflow);
        let c = simulate_path(&sc, &grid, &bound, 11, 5, &outputs).unwrap();
        assert!(a.events != c.events || a.queue != c.queue);
    }

    #[test]
    fn jump_times_strictly_increase_and_capacities_piecewise_constant() {
        let sc = single_edge_scenario();
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        let outputs = output_times(sc.horizon, sc.output_step);
        let path = simulate_path(&sc, &grid, &bound, 21, 0, &outputs).unwrap();
        assert!(!path.events.is_empty());
        for w in path.events.windows(2) {
            assert!(w[1].time > w[0].time);
        }
        // Each grid sample's capacity must match the regime implied by the
        // event list at that time.
        let mut r = sc.initial.regimes[0];
        let mut ev = path.events.iter().peekable();
        for (k, &t) in path.times.iter().enumerate() {
            while let Some(e) = ev.peek() {
                if e.time <= t {
                    r = e.to;
                    ev.next();
                } else {
                    break;
                }
            }
            assert_eq!(path.regimes[k][0], r as u32, "regime mismatch at t = {t}");
            assert_eq!(path.capacity[k][0], sc.capacities[0][r - 1]);
        }
    }

    #[test]
    fn degenerate_pdmp_equals_deterministic_solution() {
        let mut sc = single_edge_scenario();
        sc.rates = constant_rate_spec(1, 0.0);
        let grid = Grid::new(&sc).unwrap();
        let bound = uniform_bound(&sc.rates, &sc);
        let outputs = output_times(sc.horizon, sc.output_step);
        let path = simulate_path(&sc, &grid, &bound, 0, 0, &outputs).unwrap();
        assert!(path.events.is_empty());

        let y0 = HybridState::initial(&sc);
        for (k, &t) in outputs.iter().enumerate() {
            let mut ledger = FluxLedger::new(1);
            let fresh = evolve(&y0.network, &y0.regimes, t, &sc, &grid, &mut ledger).unwrap();
            assert_eq!(path.queue[k][0], fresh.queues[0]);
            assert_eq!(path.outflow[k], ledger.outflow_acc);
            assert_eq!(path.mass[k], fresh.mass(grid.dx));
        }
    }

    #[test]
    fn output_grid_pins_horizon() {
        let times = output_times(30.0, 0.1);
        assert_eq!(times.len(), 301);
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 30.0);
    }
}

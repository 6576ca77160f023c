//! Performance measures on recorded paths and their ensemble aggregation:
//! accumulated queue integral, accumulated network outflow, streaming
//! mean/variance accumulators and terminal-value histograms.

use thiserror::Error;

use crate::pdmp::JumpEvent;

#[derive(Debug, Error)]
pub enum MeasuresError {
    #[error("time {0} is not on the output grid")]
    OffGrid(f64),
    #[error("accumulator and path live on different output grids")]
    GridMismatch,
}

/// Everything recorded at one output-grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub time: f64,
    pub regime: Vec<u32>,
    pub capacity: Vec<f64>,
    pub queue: Vec<f64>,
    pub ur: Vec<f64>,
    pub rwip: Vec<f64>,
    pub exit_flux: Vec<f64>,
    /// Per edge, the largest v * rho over the cells (peak flux demand).
    pub vrho_max: Vec<f64>,
    /// Ledger-accumulated network outflow up to this time.
    pub outflow_acc: f64,
    /// Ledger-accumulated external inflow up to this time.
    pub inflow_acc: f64,
    /// Total goods in the network (queues plus integrated densities).
    pub mass: f64,
}

/// One simulated path: grid samples in column form, the exact jump-event
/// list, and the accumulated measures.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    /// Indexed `[time][edge]`.
    pub regimes: Vec<Vec<u32>>,
    pub capacity: Vec<Vec<f64>>,
    pub queue: Vec<Vec<f64>>,
    pub ur: Vec<Vec<f64>>,
    pub rwip: Vec<Vec<f64>>,
    pub exit_flux: Vec<Vec<f64>>,
    pub vrho_max: Vec<Vec<f64>>,
    /// Accumulated network outflow at each grid time (left-endpoint ledger,
    /// exact against the scheme's mass balance).
    pub outflow: Vec<f64>,
    /// Accumulated external inflow at each grid time.
    pub inflow: Vec<f64>,
    /// Network mass at each grid time.
    pub mass: Vec<f64>,
    /// Accumulated queue integral at each grid time (trapezoidal).
    pub q_net: Vec<f64>,
    pub events: Vec<JumpEvent>,
    /// Number of dominating-process candidates drawn within the horizon.
    pub candidate_draws: u64,
}

impl PathRecord {
    pub fn from_samples(samples: Vec<GridSample>, events: Vec<JumpEvent>, candidate_draws: u64) -> Self {
        let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
        let mut q_net = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for s in &samples {
            let total_q: f64 = s.queue.iter().sum();
            if let Some((t_prev, q_prev)) = prev {
                acc += 0.5 * (s.time - t_prev) * (q_prev + total_q);
            }
            q_net.push(acc);
            prev = Some((s.time, total_q));
        }
        Self {
            times,
            regimes: samples.iter().map(|s| s.regime.clone()).collect(),
            capacity: samples.iter().map(|s| s.capacity.clone()).collect(),
            queue: samples.iter().map(|s| s.queue.clone()).collect(),
            ur: samples.iter().map(|s| s.ur.clone()).collect(),
            rwip: samples.iter().map(|s| s.rwip.clone()).collect(),
            exit_flux: samples.iter().map(|s| s.exit_flux.clone()).collect(),
            vrho_max: samples.iter().map(|s| s.vrho_max.clone()).collect(),
            outflow: samples.iter().map(|s| s.outflow_acc).collect(),
            inflow: samples.iter().map(|s| s.inflow_acc).collect(),
            mass: samples.iter().map(|s| s.mass).collect(),
            q_net,
            events,
            candidate_draws,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.regimes.first().map_or(0, Vec::len)
    }

    fn grid_index(&self, t: f64) -> Result<usize, MeasuresError> {
        self.times
            .iter()
            .position(|&x| x == t)
            .ok_or(MeasuresError::OffGrid(t))
    }
}

/// Accumulated queue integral of the whole network up to grid time `t`.
pub fn q_net(path: &PathRecord, t: f64) -> Result<f64, MeasuresError> {
    Ok(path.q_net[path.grid_index(t)?])
}

/// Accumulated network outflow up to grid time `t`.
pub fn g_net_out(path: &PathRecord, t: f64) -> Result<f64, MeasuresError> {
    Ok(path.outflow[path.grid_index(t)?])
}

/// Discrete total variation of a density vector.
pub fn discrete_tv(rho: &[f64]) -> f64 {
    rho.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Streaming mean and second central moment (Welford), mergeable so that
/// parallel workers can be reduced in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Which measure families an ensemble tracks.
#[derive(Debug, Clone, Copy)]
pub struct MeasureSelection {
    pub capacity: bool,
    pub queue: bool,
    pub q_net: bool,
    pub g_net_out: bool,
}

impl Default for MeasureSelection {
    fn default() -> Self {
        Self {
            capacity: true,
            queue: true,
            q_net: true,
            g_net_out: true,
        }
    }
}

/// Ensemble accumulator: per-time(-and-edge) streaming moments plus the raw
/// terminal values of the network measures for histogramming.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub num_edges: usize,
    pub selection: MeasureSelection,
    pub capacity: Vec<Vec<Welford>>,
    pub queue: Vec<Vec<Welford>>,
    pub q_net: Vec<Welford>,
    pub g_net_out: Vec<Welford>,
    /// Terminal q_net per path, in path order.
    pub terminal_q_net: Vec<f64>,
    /// Terminal network outflow per path, in path order.
    pub terminal_g_out: Vec<f64>,
    /// Per edge, the largest queue seen over all paths and sample times.
    pub max_queue: Vec<f64>,
    /// Per edge, the largest v * rho seen over all paths and sample times.
    pub max_vrho: Vec<f64>,
    pub paths: u64,
    pub total_candidates: u64,
    pub total_jumps: u64,
}

impl EnsembleStats {
    pub fn new(times: Vec<f64>, num_edges: usize, selection: MeasureSelection) -> Self {
        let nt = times.len();
        Self {
            times,
            num_edges,
            selection,
            capacity: vec![vec![Welford::default(); num_edges]; nt],
            queue: vec![vec![Welford::default(); num_edges]; nt],
            q_net: vec![Welford::default(); nt],
            g_net_out: vec![Welford::default(); nt],
            terminal_q_net: Vec::new(),
            terminal_g_out: Vec::new(),
            max_queue: vec![0.0; num_edges],
            max_vrho: vec![0.0; num_edges],
            paths: 0,
            total_candidates: 0,
            total_jumps: 0,
        }
    }

    pub fn accumulate(&mut self, path: &PathRecord) -> Result<(), MeasuresError> {
        if path.times != self.times || path.num_edges() != self.num_edges {
            return Err(MeasuresError::GridMismatch);
        }
        for k in 0..self.times.len() {
            if self.selection.capacity {
                for e in 0..self.num_edges {
                    self.capacity[k][e].push(path.capacity[k][e]);
                }
            }
            if self.selection.queue {
                for e in 0..self.num_edges {
                    self.queue[k][e].push(path.queue[k][e]);
                }
            }
            if self.selection.q_net {
                self.q_net[k].push(path.q_net[k]);
            }
            if self.selection.g_net_out {
                self.g_net_out[k].push(path.outflow[k]);
            }
            for e in 0..self.num_edges {
                self.max_queue[e] = self.max_queue[e].max(path.queue[k][e]);
                self.max_vrho[e] = self.max_vrho[e].max(path.vrho_max[k][e]);
            }
        }
        self.terminal_q_net.push(*path.q_net.last().unwrap());
        self.terminal_g_out.push(*path.outflow.last().unwrap());
        self.paths += 1;
        self.total_candidates += path.candidate_draws;
        self.total_jumps += path.events.len() as u64;
        Ok(())
    }

    /// Merge a second accumulator into this one; equivalent (to rounding) to
    /// accumulating the concatenated sample.
    pub fn merge(&mut self, other: &EnsembleStats) -> Result<(), MeasuresError> {
        if other.times != self.times || other.num_edges != self.num_edges {
            return Err(MeasuresError::GridMismatch);
        }
        for k in 0..self.times.len() {
            for e in 0..self.num_edges {
                self.capacity[k][e].merge(&other.capacity[k][e]);
                self.queue[k][e].merge(&other.queue[k][e]);
            }
            self.q_net[k].merge(&other.q_net[k]);
            self.g_net_out[k].merge(&other.g_net_out[k]);
        }
        self.terminal_q_net.extend_from_slice(&other.terminal_q_net);
        self.terminal_g_out.extend_from_slice(&other.terminal_g_out);
        for e in 0..self.num_edges {
            self.max_queue[e] = self.max_queue[e].max(other.max_queue[e]);
            self.max_vrho[e] = self.max_vrho[e].max(other.max_vrho[e]);
        }
        self.paths += other.paths;
        self.total_candidates += other.total_candidates;
        self.total_jumps += other.total_jumps;
        Ok(())
    }

    /// Time-averaged ensemble-mean capacity of one edge over `[t0, t1]`.
    pub fn mean_capacity_over(&self, e: usize, t0: f64, t1: f64) -> f64 {
        let mut sum = 0.0;
        let mut count = 0;
        for (k, &t) in self.times.iter().enumerate() {
            if t >= t0 && t <= t1 {
                sum += self.capacity[k][e].mean();
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Uniform-bin histogram over the observed range.
#[derive(Debug, Clone)]
pub struct Histogram {
    /// `bins + 1` edges; bin `i` covers `[edges[i], edges[i+1])`, the last
    /// bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    assert!(bins >= 1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0u64; bins];
    if values.is_empty() {
        return Histogram {
            edges: vec![0.0; bins + 1],
            counts,
        };
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let i = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn flat_sample(t: f64, q: f64) -> GridSample {
        GridSample {
            time: t,
            regime: vec![2],
            capacity: vec![2.0],
            queue: vec![q],
            ur: vec![0.0],
            rwip: vec![0.0],
            exit_flux: vec![0.0],
            vrho_max: vec![0.0],
            outflow_acc: 0.0,
            inflow_acc: 0.0,
            mass: q,
        }
    }

    fn constant_queue_path(q: f64, n: usize, step: f64) -> PathRecord {
        let samples: Vec<GridSample> = (0..=n).map(|k| flat_sample(k as f64 * step, q)).collect();
        PathRecord::from_samples(samples, Vec::new(), 0)
    }

    #[test]
    fn q_net_constant_queue() {
        let path = constant_queue_path(2.0, 100, 0.1);
        assert_eq!(q_net(&path, 0.0).unwrap(), 0.0);
        let v = q_net(&path, 10.0).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn q_net_zero_path() {
        let path = constant_queue_path(0.0, 50, 0.1);
        for &t in &path.times {
            assert_eq!(q_net(&path, t).unwrap(), 0.0);
            assert_eq!(g_net_out(&path, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn off_grid_time_is_an_error() {
        let path = constant_queue_path(1.0, 10, 0.1);
        assert!(matches!(
            q_net(&path, 0.55),
            Err(MeasuresError::OffGrid(_))
        ));
    }

    #[test]
    fn accumulated_measures_nondecreasing() {
        let path = constant_queue_path(1.5, 60, 0.5);
        for w in path.q_net.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn discrete_tv_examples() {
        assert_eq!(discrete_tv(&[0.7; 9]), 0.0);
        assert_eq!(discrete_tv(&[0.0, 2.0, 0.0]), 4.0);
    }

    #[test]
    fn single_path_mean_is_exact_and_repeat_has_zero_variance() {
        let path = constant_queue_path(1.25, 20, 0.1);
        let mut stats = EnsembleStats::new(path.times.clone(), 1, MeasureSelection::default());
        stats.accumulate(&path).unwrap();
        assert_eq!(stats.queue[5][0].mean(), 1.25);
        assert_eq!(stats.q_net[20].mean(), path.q_net[20]);
        stats.accumulate(&path).unwrap();
        assert_eq!(stats.queue[5][0].variance(), 0.0);
        assert_eq!(stats.paths, 2);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = constant_queue_path(1.0, 10, 0.1);
        let b = constant_queue_path(1.0, 20, 0.1);
        let mut stats = EnsembleStats::new(a.times.clone(), 1, MeasureSelection::default());
        assert!(matches!(
            stats.accumulate(&b),
            Err(MeasuresError::GridMismatch)
        ));
    }

    #[test]
    fn welford_merge_matches_two_pass_reference() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..200);
            let split = rng.gen_range(1..n);
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..10.0)).collect();

            let mut left = Welford::default();
            let mut right = Welford::default();
            for (i, &x) in data.iter().enumerate() {
                if i < split {
                    left.push(x);
                } else {
                    right.push(x);
                }
            }
            left.merge(&right);

            let mean: f64 = data.iter().sum::<f64>() / n as f64;
            let var: f64 =
                data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            assert!((left.mean() - mean).abs() <= 1e-10 * mean.abs().max(1.0));
            assert!((left.variance() - var).abs() <= 1e-10 * var.abs().max(1.0));
        }
    }

    #[test]
    fn histogram_counts_sum_to_sample_size() {
        let mut rng = StdRng::seed_from_u64(9);
        let values: Vec<f64> = (0..5000).map(|_| rng.gen_range(-2.0..7.0)).collect();
        let h = histogram(&values, 40);
        assert_eq!(h.counts.iter().sum::<u64>(), 5000);
        assert_eq!(h.edges.len(), 41);
        assert!(h.edges.windows(2).all(|w| w[1] >= w[0]));
        // extremes land in the outer bins
        assert!(h.counts[0] > 0 && h.counts[39] > 0);
    }

    #[test]
    fn histogram_degenerate_range() {
        let h = histogram(&[3.0; 17], 40);
        assert_eq!(h.counts[0], 17);
        assert_eq!(h.counts.iter().sum::<u64>(), 17);
    }
}

//! Ensemble execution: many independent sample paths with deterministic
//! per-path substreams, parallel workers and a merge order fixed by path
//! index, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::measures::{EnsembleStats, MeasureSelection, PathRecord};
use crate::model::Scenario;
use crate::pdmp::{output_times, simulate_path, PathError};
use crate::rates::uniform_bound;
use crate::solver::Grid;

/// Paths per work unit. Fixed so the block decomposition, and with it the
/// floating merge order, is independent of the worker count.
const BLOCK: u64 = 64;

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Sample count M.
    pub samples: u64,
    /// Master seed; path i uses substream (seed, i).
    pub seed: u64,
    /// Worker thread count; 0 picks the rayon default.
    pub workers: usize,
    /// Output grid step override; defaults to the scenario's.
    pub output_step: Option<f64>,
    /// Keep the first K full path records.
    pub retain_paths: usize,
    pub measures: MeasureSelection,
}

impl EnsembleConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            workers: 0,
            output_step: None,
            retain_paths: 0,
            measures: MeasureSelection::default(),
        }
    }
}

#[derive(Debug)]
pub struct EnsembleRun {
    pub stats: EnsembleStats,
    /// The first `retain_paths` paths, in path order.
    pub retained: Vec<PathRecord>,
}

/// Simulate paths `0..M-1` and merge per-block accumulators in block order.
pub fn run_ensemble(sc: &Scenario, cfg: &EnsembleConfig) -> Result<EnsembleRun, PathError> {
    let grid = Grid::new(sc)?;
    let bound = uniform_bound(&sc.rates, sc);
    let step = cfg.output_step.unwrap_or(sc.output_step);
    let outputs = output_times(sc.horizon, step);

    let num_blocks = cfg.samples.div_ceil(BLOCK);
    let run_block = |b: u64| -> Result<(EnsembleStats, Vec<PathRecord>), PathError> {
        let mut stats = EnsembleStats::new(outputs.clone(), sc.num_edges(), cfg.measures);
        let mut retained = Vec::new();
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(cfg.samples);
        for i in lo..hi {
            let path = simulate_path(sc, &grid, &bound, cfg.seed, i, &outputs)?;
            stats
                .accumulate(&path)
                .expect("path recorded on the ensemble grid");
            if (i as usize) < cfg.retain_paths {
                retained.push(path);
            }
        }
        Ok((stats, retained))
    };

    let blocks: Vec<Result<_, PathError>> = if cfg.workers == 1 {
        (0..num_blocks).map(run_block).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .expect("thread pool");
        pool.install(|| (0..num_blocks).into_par_iter().map(run_block).collect())
    };

    let mut stats = EnsembleStats::new(outputs, sc.num_edges(), cfg.measures);
    let mut retained = Vec::new();
    for block in blocks {
        let (block_stats, block_paths) = block?;
        stats.merge(&block_stats).expect("blocks share one grid");
        retained.extend(block_paths);
    }
    Ok(EnsembleRun { stats, retained })
}

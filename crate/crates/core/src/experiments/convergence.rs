use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::fluid::{equilibrium, integrate, FluidParams};
use crate::model::{weighted_norm, OccupancyVector, SystemParams, DEFAULT_TRUNCATION};
use crate::sim::{run_steady_state, run_trajectory, RunConfig, SimError, SteadyStateRun};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub ns: Vec<usize>,
    /// Template; `n` is replaced by each entry of `ns`.
    pub params: SystemParams,
    pub initial: OccupancyVector,
    pub horizon: f64,
    pub sample_interval: f64,
    pub seeds: Vec<u64>,
    /// Levels compared in the norm (and the fluid truncation).
    pub levels: usize,
}

impl ConvergenceConfig {
    pub fn new(ns: Vec<usize>, params: SystemParams, horizon: f64, seeds: Vec<u64>) -> Self {
        ConvergenceConfig {
            ns,
            params,
            initial: OccupancyVector::empty(DEFAULT_TRUNCATION),
            horizon,
            sample_interval: 0.05,
            seeds,
            levels: DEFAULT_TRUNCATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mean_gap: f64,
    pub half_width: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `Some(true)` when the mean gap strictly decreases along `ns`; `None`
    /// for a single n.
    pub decreasing: Option<bool>,
}

/// Mean over seeds of `sup_t ||S^n(t) - s(t)||_w` for each n.
pub fn run_convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceTable, ExperimentError> {
    if cfg.ns.is_empty() || cfg.seeds.is_empty() {
        return Err(ExperimentError::InvalidScenario("convergence study needs ns and seeds".into()));
    }
    if cfg.ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::InvalidScenario("ns must be increasing".into()));
    }
    let fluid = FluidParams::new(cfg.params.lambda, cfg.params.regime)
        .with_truncation(cfg.levels)
        .with_output_interval(cfg.sample_interval)
        .validate()?;
    let solution = integrate(&cfg.initial.resized(cfg.levels), &fluid, cfg.horizon)?;

    let jobs: Vec<(usize, u64)> = cfg
        .ns
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let gaps: Vec<Result<f64, SimError>> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let p = cfg.params.with_n(n);
            let run = run_trajectory(&p, &cfg.initial, cfg.horizon, cfg.sample_interval, cfg.levels, seed)?;
            Ok(run
                .times
                .iter()
                .zip(&run.occupancy)
                .map(|(&t, s)| weighted_norm(s, &solution.at(t)))
                .fold(0.0, f64::max))
        })
        .collect();

    let per = cfg.seeds.len();
    let mut rows = Vec::with_capacity(cfg.ns.len());
    for (i, &n) in cfg.ns.iter().enumerate() {
        let g = gaps[i * per..(i + 1) * per]
            .iter()
            .cloned()
            .collect::<Result<Vec<f64>, SimError>>()?;
        let (mean, hw) = crate::sim::stats::mean_and_half_width(&g);
        rows.push(ConvergenceRow {
            n,
            mean_gap: mean,
            half_width: hw,
            min_gap: g.iter().cloned().fold(f64::INFINITY, f64::min),
            max_gap: g.iter().cloned().fold(0.0, f64::max),
            seeds: g.len(),
        });
    }
    let decreasing = (rows.len() > 1).then(|| rows.windows(2).all(|w| w[1].mean_gap < w[0].mean_gap));
    Ok(ConvergenceTable { rows, decreasing })
}

/// Time-averaged occupancy of long runs against the fluid equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeRecord {
    pub params: SystemParams,
    /// Averaged `S_i` for `i = 0..=levels`.
    pub averaged: Vec<f64>,
    pub s_star: Vec<f64>,
    /// `max_{1 <= i <= levels} |avg S_i - s_i*|`.
    pub max_gap: f64,
    pub levels: usize,
    pub replications: usize,
    pub flagged: bool,
}

/// Compares levels `1..=6` by default.
pub const INTERCHANGE_LEVELS: usize = 6;

pub fn run_interchange_check(
    params: &SystemParams,
    run: &RunConfig,
    seeds: &[u64],
) -> Result<InterchangeRecord, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::InvalidScenario("no seeds".into()));
    }
    let levels = INTERCHANGE_LEVELS;
    let eq = equilibrium(&FluidParams::new(params.lambda, params.regime))?;
    let results: Vec<Result<SteadyStateRun, SimError>> =
        seeds.par_iter().map(|&s| run_steady_state(params, run, s)).collect();
    let mut ok = Vec::new();
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(SimError::UnderSampled { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let flagged = ok.len() < seeds.len();
    let averaged = merge_occupancy(&ok, levels);
    let s_star: Vec<f64> = (0..=levels).map(|i| eq.s_star.get(i)).collect();
    let max_gap = if ok.is_empty() {
        f64::NAN
    } else {
        (1..=levels).map(|i| (averaged[i] - s_star[i]).abs()).fold(0.0, f64::max)
    };
    Ok(InterchangeRecord {
        params: *params,
        averaged,
        s_star,
        max_gap,
        levels,
        replications: ok.len(),
        flagged,
    })
}

/// Level-wise mean of `occupancy.mean` across runs, levels `0..=levels`.
fn merge_occupancy(runs: &[SteadyStateRun], levels: usize) -> Vec<f64> {
    let mut out = vec![0.0; levels + 1];
    if runs.is_empty() {
        out.fill(f64::NAN);
        return out;
    }
    for r in runs {
        for (i, o) in out.iter_mut().enumerate() {
            *o += r.occupancy.mean.get(i).copied().unwrap_or(0.0);
        }
    }
    let k = runs.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

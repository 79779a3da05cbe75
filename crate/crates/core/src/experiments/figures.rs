use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{merge_replications, nominal_message_rate, replication_seeds, ExperimentError, ReplicatedEstimate};
use crate::fluid::{constrained_delay, integrate, Annotation, FluidParams, FluidSolution};
use crate::model::{weighted_norm, OccupancyVector, Regime, SystemParams};
use crate::sim::{run_steady_state, RunConfig, SimError, SteadyStateRun};

/// Outcome of the High Message trajectory started at `s_1 = s_2 = s_3 = 0.7`.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure3Result {
    pub solution: FluidSolution,
    pub hit_time: Option<f64>,
    pub release_time: Option<f64>,
    pub s2_at_release: Option<f64>,
    /// `||s(T) - s*||_w` with `s* = (1, lambda, 0, ...)`.
    pub final_gap: f64,
}

impl Figure3Result {
    pub fn plateau_length(&self) -> Option<f64> {
        Some(self.release_time? - self.hit_time?)
    }
}

/// Default initial condition `(1, 0.7, 0.7, 0.7, 0, ...)`.
pub fn figure3_initial() -> OccupancyVector {
    OccupancyVector::from_tail(&[0.7, 0.7, 0.7]).expect("valid")
}

pub fn run_figure3(
    params: &FluidParams,
    initial: &OccupancyVector,
    horizon: f64,
) -> Result<Figure3Result, ExperimentError> {
    let solution = integrate(initial, params, horizon)?;
    let events = solution.events();
    let hit_time = events.iter().find(|e| e.1 == Annotation::BoundaryHit).map(|e| e.0);
    let release = events.iter().find(|e| e.1 == Annotation::BoundaryRelease).copied();
    let s2_at_release = release.map(|(t, _)| solution.at(t).get(2));
    let star = OccupancyVector::from_tail(&[params.lambda]).expect("valid");
    let final_gap = weighted_norm(solution.final_state(), &star);
    Ok(Figure3Result {
        hit_time,
        release_time: release.map(|e| e.0),
        s2_at_release,
        final_gap,
        solution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure4Config {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub warmup: f64,
}

impl Default for Figure4Config {
    fn default() -> Self {
        Figure4Config {
            lambdas: vec![0.5, 0.7, 0.9, 0.95, 0.99, 0.995],
            n: 500,
            c: 2,
            d: 2,
            seeds: replication_seeds(1, 8),
            horizon: 2000.0,
            warmup: 600.0,
        }
    }
}

impl Figure4Config {
    /// The three compared policies at load `lambda`: RCPB with `alpha =
    /// lambda`, power-of-d, PULL.
    pub fn policies(&self, lambda: f64) -> [SystemParams; 3] {
        [
            SystemParams::new(self.n, lambda, Regime::constrained_with_alpha(lambda, lambda, self.c)),
            SystemParams::new(self.n, lambda, Regime::PowerOfD { d: self.d }),
            SystemParams::new(self.n, lambda, Regime::Pull),
        ]
    }

    fn run_config(&self) -> RunConfig {
        RunConfig::new(self.horizon).with_warmup(self.warmup)
    }
}

/// One (lambda, policy) row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure4Point {
    pub lambda: f64,
    /// `ln(1 / (1 - lambda))`
    pub x: f64,
    pub policy: String,
    pub sim_delay: f64,
    pub ci_half_width: f64,
    pub predicted: f64,
    pub message_rate: f64,
    pub nominal_message_rate: f64,
    pub replications: usize,
    pub samples: u64,
    pub flagged: bool,
}

/// Per-lambda row: the three simulated policies and the two formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure4Row {
    pub lambda: f64,
    pub x: f64,
    pub rcpb: ReplicatedEstimate,
    pub power_of_d: ReplicatedEstimate,
    pub pull: ReplicatedEstimate,
    pub rcpb_fluid: f64,
    pub power_of_d_formula: f64,
    /// Per-replication runs in policy order (RCPB, power-of-d, PULL).
    pub runs: Vec<Vec<Result<SteadyStateRun, SimError>>>,
}

impl Figure4Row {
    pub fn points(&self, cfg: &Figure4Config) -> Vec<Figure4Point> {
        let policies = cfg.policies(self.lambda);
        let names = ["rcpb", "power_of_d", "pull"];
        let predicted = [self.rcpb_fluid, self.power_of_d_formula, 0.0];
        [&self.rcpb, &self.power_of_d, &self.pull]
            .iter()
            .enumerate()
            .map(|(i, est)| Figure4Point {
                lambda: self.lambda,
                x: self.x,
                policy: names[i].to_string(),
                sim_delay: est.mean,
                ci_half_width: est.half_width,
                predicted: predicted[i],
                message_rate: est.message_rate,
                nominal_message_rate: nominal_message_rate(&policies[i]),
                replications: est.replications,
                samples: est.samples,
                flagged: est.flagged,
            })
            .collect()
    }
}

/// Simulates RCPB (`c`, `alpha = lambda`), power-of-d and PULL at every
/// load in the grid. Under-sampled replications are flagged, not fatal.
pub fn run_figure4(cfg: &Figure4Config) -> Result<Vec<Figure4Row>, ExperimentError> {
    if cfg.lambdas.is_empty() || cfg.seeds.is_empty() {
        return Err(ExperimentError::InvalidScenario("figure4 needs lambdas and seeds".into()));
    }
    let run = cfg.run_config();
    let mut jobs = Vec::new();
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        for (pi, params) in cfg.policies(lambda).into_iter().enumerate() {
            params.validate()?;
            for &seed in &cfg.seeds {
                jobs.push((li, pi, params, seed));
            }
        }
    }
    let results: Vec<Result<SteadyStateRun, SimError>> = jobs
        .par_iter()
        .map(|(_, _, params, seed)| run_steady_state(params, &run, *seed))
        .collect();
    for r in &results {
        if let Err(e) = r {
            if !matches!(e, SimError::UnderSampled { .. }) {
                return Err(e.clone().into());
            }
        }
    }

    let reps = cfg.seeds.len();
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let runs: Vec<Vec<_>> = (0..3).map(|_| results.by_ref().take(reps).collect()).collect();
        rows.push(Figure4Row {
            lambda,
            x: (1.0 / (1.0 - lambda)).ln(),
            rcpb: merge_replications(&runs[0]),
            power_of_d: merge_replications(&runs[1]),
            pull: merge_replications(&runs[2]),
            rcpb_fluid: constrained_delay(lambda, lambda, cfg.c),
            power_of_d_formula: crate::fluid::power_of_d_delay(lambda, cfg.d),
            runs,
        });
    }
    Ok(rows)
}

//! Scenario harness coupling the simulator with the fluid engine.
//!
//! Replications run in parallel on the current rayon pool; results are
//! collected in input order and reduced sequentially, so every table is a
//! deterministic function of the seeds.

pub mod convergence;
pub mod figures;
pub mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::{equilibrium, power_of_d_delay, FluidError, FluidParams};
use crate::model::{ModelError, Regime, SystemParams};
use crate::sim::stats::mean_and_half_width;
use crate::sim::{measure_message_rate, run_steady_state, RunConfig, SimError, SteadyStateRun};

pub use convergence::{
    run_convergence_study, run_interchange_check, ConvergenceConfig, ConvergenceRow, ConvergenceTable,
    InterchangeRecord,
};
pub use figures::{run_figure3, run_figure4, Figure3Result, Figure4Config, Figure4Point, Figure4Row};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Lists of values swept over; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub lambdas: Vec<f64>,
    pub ns: Vec<usize>,
    pub cs: Vec<usize>,
    pub alphas: Vec<f64>,
    pub ds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: SystemParams,
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub axes: SweepAxes,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::InvalidScenario("no seeds".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ExperimentError::InvalidScenario("seeds must be distinct".into()));
        }
        if self.points().is_empty() {
            return Err(ExperimentError::InvalidScenario("empty sweep".into()));
        }
        Ok(())
    }

    /// Cartesian product of the axes applied to the base parameters.
    pub fn points(&self) -> Vec<SystemParams> {
        let base = self.system;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let lambdas = or(&self.axes.lambdas, base.lambda);
        let ns = if self.axes.ns.is_empty() { vec![base.n] } else { self.axes.ns.clone() };
        let mut out = Vec::new();
        for &lambda in &lambdas {
            for &n in &ns {
                for regime in self.regimes_at(lambda) {
                    let mut p = SystemParams::new(n, lambda, regime);
                    if regime == base.regime {
                        p.memory = base.memory;
                        p.idle_rate = base.idle_rate;
                    }
                    out.push(p);
                }
            }
        }
        out
    }

    fn regimes_at(&self, lambda: f64) -> Vec<Regime> {
        let axes = &self.axes;
        match self.system.regime {
            Regime::Constrained { c, mu } => {
                let cs = if axes.cs.is_empty() { vec![c] } else { axes.cs.clone() };
                let mus: Vec<f64> = if axes.alphas.is_empty() {
                    vec![mu]
                } else {
                    axes.alphas.iter().map(|a| a / (1.0 - lambda)).collect()
                };
                cs.iter()
                    .flat_map(|&c| mus.iter().map(move |&mu| Regime::Constrained { c, mu }))
                    .collect()
            }
            Regime::HighMessage { c } => {
                let cs = if axes.cs.is_empty() { vec![c] } else { axes.cs.clone() };
                cs.into_iter().map(|c| Regime::HighMessage { c }).collect()
            }
            Regime::PowerOfD { d } => {
                let ds = if axes.ds.is_empty() { vec![d] } else { axes.ds.clone() };
                ds.into_iter().map(|d| Regime::PowerOfD { d }).collect()
            }
            other => vec![other],
        }
    }
}

/// `count` distinct seeds starting at `base`.
pub fn replication_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Large-n prediction of the mean waiting time.
pub fn predicted_delay(lambda: f64, regime: &Regime) -> Result<f64, FluidError> {
    match *regime {
        Regime::PowerOfD { d } => Ok(power_of_d_delay(lambda, d)),
        _ => Ok(equilibrium(&FluidParams::new(lambda, *regime))?.delay),
    }
}

/// Expected messages per unit time: `alpha n` for the token regimes
/// (`alpha = mu (1 - lambda)`), `lambda n` for PULL, `2 d lambda n` for
/// power-of-d.
pub fn nominal_message_rate(params: &SystemParams) -> f64 {
    let n = params.n as f64;
    match params.regime {
        Regime::RandomRouting => 0.0,
        Regime::PowerOfD { d } => 2.0 * d as f64 * params.lambda * n,
        Regime::Pull => params.lambda * n,
        _ => params.message_rate() * (1.0 - params.lambda) * n,
    }
}

/// Replications of one parameter point reduced to a single estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedEstimate {
    /// Mean of the per-replication mean waits.
    pub mean: f64,
    /// 95% half-width across replications (the batch-means half-width when
    /// only one replication succeeded).
    pub half_width: f64,
    pub replications: usize,
    pub samples: u64,
    pub message_rate: f64,
    pub mean_l1: f64,
    /// Some replication was under-sampled and left out.
    pub flagged: bool,
}

/// Pure reduction over replication outcomes.
pub fn merge_replications(runs: &[Result<SteadyStateRun, SimError>]) -> ReplicatedEstimate {
    let ok: Vec<&SteadyStateRun> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let flagged = ok.len() < runs.len();
    if ok.is_empty() {
        return ReplicatedEstimate {
            mean: f64::NAN,
            half_width: f64::NAN,
            replications: 0,
            samples: 0,
            message_rate: f64::NAN,
            mean_l1: f64::NAN,
            flagged: true,
        };
    }
    let means: Vec<f64> = ok.iter().map(|r| r.waits.mean).collect();
    let (mean, mut half_width) = mean_and_half_width(&means);
    if ok.len() == 1 {
        half_width = ok[0].waits.half_width;
    }
    let k = ok.len() as f64;
    ReplicatedEstimate {
        mean,
        half_width,
        replications: ok.len(),
        samples: ok.iter().map(|r| r.waits.count).sum(),
        message_rate: ok.iter().map(|r| measure_message_rate(r)).sum::<f64>() / k,
        mean_l1: ok.iter().map(|r| r.occupancy.mean_l1).sum::<f64>() / k,
        flagged,
    }
}

/// Runs every seed at one parameter point, in parallel.
pub fn replicate(
    params: &SystemParams,
    run: &RunConfig,
    seeds: &[u64],
) -> Vec<Result<SteadyStateRun, SimError>> {
    seeds.par_iter().map(|&seed| run_steady_state(params, run, seed)).collect()
}

/// Simulated versus predicted delay at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub scenario: String,
    pub n: usize,
    pub lambda: f64,
    pub regime: String,
    pub sim_delay: f64,
    pub sim_ci: f64,
    pub fluid_delay: f64,
    /// `sup_t ||S^n(t) - s(t)||_w` when a trajectory was compared.
    pub trajectory_gap: Option<f64>,
    pub message_rate: f64,
    pub nominal_message_rate: f64,
    pub samples: u64,
    pub flagged: bool,
}

/// Steady-state comparison at every point of the scenario's sweep.
pub fn run_sweep(scenario: &Scenario) -> Result<Vec<ComparisonRecord>, ExperimentError> {
    Ok(run_sweep_with_runs(scenario)?.0)
}

/// As [`run_sweep`], also returning the successful replications per point.
pub fn run_sweep_with_runs(
    scenario: &Scenario,
) -> Result<(Vec<ComparisonRecord>, Vec<Vec<SteadyStateRun>>), ExperimentError> {
    scenario.validate()?;
    let points = scenario.points();
    for p in &points {
        p.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| scenario.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Result<SteadyStateRun, SimError>> = jobs
        .par_iter()
        .map(|&(i, seed)| run_steady_state(&points[i], &scenario.run, seed))
        .collect();
    let per_point = scenario.seeds.len();
    let mut records = Vec::with_capacity(points.len());
    let mut runs = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let slice = &results[i * per_point..(i + 1) * per_point];
        if let Some(Err(e)) = slice.iter().find(|r| !matches!(r, Ok(_) | Err(SimError::UnderSampled { .. }))) {
            return Err(e.clone().into());
        }
        let est = merge_replications(slice);
        records.push(ComparisonRecord {
            scenario: scenario.name.clone(),
            n: p.n,
            lambda: p.lambda,
            regime: p.regime.name().to_string(),
            sim_delay: est.mean,
            sim_ci: est.half_width,
            fluid_delay: predicted_delay(p.lambda, &p.regime)?,
            trajectory_gap: None,
            message_rate: est.message_rate,
            nominal_message_rate: nominal_message_rate(p),
            samples: est.samples,
            flagged: est.flagged,
        });
        runs.push(slice.iter().filter_map(|r| r.as_ref().ok().cloned()).collect());
    }
    Ok((records, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario {
            name: "t".into(),
            system: SystemParams::new(50, 0.9, Regime::Constrained { c: 2, mu: 9.0 }),
            run: RunConfig::new(400.0).with_min_samples(1000),
            seeds: vec![1, 2],
            axes: SweepAxes::default(),
        }
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let mut s = base();
        s.seeds = vec![3, 3];
        assert!(s.validate().is_err());
        s.seeds = vec![];
        assert!(s.validate().is_err());
    }

    #[test]
    fn axes_expand_to_product() {
        let mut s = base();
        s.axes.lambdas = vec![0.5, 0.9];
        s.axes.cs = vec![1, 2, 3];
        s.axes.alphas = vec![0.5];
        let pts = s.points();
        assert_eq!(pts.len(), 6);
        match pts[0].regime {
            Regime::Constrained { c, mu } => {
                assert_eq!(c, 1);
                assert!((mu - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn nominal_rates() {
        let p = SystemParams::new(500, 0.9, Regime::constrained_with_alpha(0.9, 0.9, 2));
        assert!((nominal_message_rate(&p) - 450.0).abs() < 1e-9);
        let p = SystemParams::new(500, 0.9, Regime::PowerOfD { d: 2 });
        assert!((nominal_message_rate(&p) - 1800.0).abs() < 1e-9);
        assert_eq!(nominal_message_rate(&SystemParams::new(5, 0.5, Regime::RandomRouting)), 0.0);
    }

    #[test]
    fn sweep_reports_nonnegative_delays() {
        let mut s = base();
        s.axes.lambdas = vec![0.5, 0.9];
        let recs = run_sweep(&s).unwrap();
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert!(r.sim_delay >= 0.0 && r.fluid_delay >= 0.0);
            assert!(r.sim_ci > 0.0);
            assert!(!r.flagged);
        }
    }

    #[test]
    fn under_sampled_points_are_flagged_not_fatal() {
        let mut s = base();
        s.run = RunConfig::new(5.0);
        let recs = run_sweep(&s).unwrap();
        assert!(recs[0].flagged);
        assert!(recs[0].sim_delay.is_nan());
    }
}

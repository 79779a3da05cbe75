use std::collections::VecDeque;

use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{fire, prepare, Event, EventClock};
use super::state::SimState;
use super::stats::{
    mean_and_half_width, OccupancySampler, TokenHistogram, WaitAccumulator, WaitingTimeStats,
};
use crate::model::{ModelError, OccupancyVector, Regime, SystemParams, DEFAULT_TRUNCATION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("under-sampled run: {got} waiting-time samples, need at least {need}")]
    UnderSampled { got: u64, need: u64 },
    #[error("invalid run settings: {0}")]
    InvalidRun(String),
}

/// Horizon, warm-up and estimator settings for a steady-state run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: f64,
    pub warmup: f64,
    /// Occupancy levels `S_1..S_K` that are time-averaged.
    pub levels: usize,
    pub batches: usize,
    pub min_samples: u64,
}

impl RunConfig {
    /// Warm-up defaults to 30% of the horizon.
    pub fn new(horizon: f64) -> Self {
        RunConfig {
            horizon,
            warmup: 0.3 * horizon,
            levels: DEFAULT_TRUNCATION,
            batches: 32,
            min_samples: 10_000,
        }
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_min_samples(mut self, min_samples: u64) -> Self {
        self.min_samples = min_samples;
        self
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::InvalidRun(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(SimError::InvalidRun(format!(
                "warmup {} must lie in [0, horizon={})",
                self.warmup, self.horizon
            )));
        }
        if self.batches < 2 || self.levels == 0 {
            return Err(SimError::InvalidRun("need at least 2 batches and 1 level".into()));
        }
        Ok(())
    }
}

/// Event counts over the observation window `[warmup, horizon]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub departures: u64,
    /// Idle messages that were stored as tokens.
    pub accepted_messages: u64,
    /// Idle messages sent while the memory was full.
    pub rejected_messages: u64,
    /// PULL: idle notifications (one per server becoming idle).
    pub idle_notifications: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateRun {
    pub params: SystemParams,
    pub seed: u64,
    pub config: RunConfig,
    pub waits: WaitingTimeStats,
    pub occupancy: OccupancySampler,
    pub tokens: TokenHistogram,
    pub counts: EventCounts,
    /// Length of the observation window.
    pub observed_time: f64,
}

/// Messages per unit time over the observation window. Power-of-d counts a
/// query and a response per sampled server.
pub fn measure_message_rate(run: &SteadyStateRun) -> f64 {
    let c = &run.counts;
    let messages = match run.params.regime {
        Regime::RandomRouting => 0.0,
        Regime::PowerOfD { d } => 2.0 * d as f64 * c.arrivals as f64,
        Regime::Pull => c.idle_notifications as f64,
        _ => (c.accepted_messages + c.rejected_messages) as f64,
    };
    messages / run.observed_time
}

/// A value that is piecewise constant in time, with a running integral.
#[derive(Debug, Clone, Copy, Default)]
struct Piecewise {
    value: f64,
    last: f64,
    integral: f64,
}

impl Piecewise {
    fn start(value: f64, t: f64) -> Self {
        Piecewise {
            value,
            last: t,
            integral: 0.0,
        }
    }

    fn set(&mut self, t: f64, value: f64) {
        self.integral += self.value * (t - self.last);
        self.last = t;
        self.value = value;
    }

    /// Integral since the last take, up to `t`; restarts the integral.
    fn take(&mut self, t: f64) -> f64 {
        self.set(t, self.value);
        std::mem::take(&mut self.integral)
    }
}

struct Collector {
    n: f64,
    warmup: f64,
    batch_len: f64,
    levels: Vec<Piecewise>,
    jobs: Piecewise,
    level_batches: Vec<Vec<f64>>,
    l1_batches: Vec<f64>,
    token_time: Vec<f64>,
    token_state: (usize, f64),
    waits: WaitAccumulator,
    counts: EventCounts,
    rejected_intensity: f64,
}

impl Collector {
    fn new(cfg: &RunConfig, n: usize, capacity: usize) -> Self {
        Collector {
            n: n as f64,
            warmup: cfg.warmup,
            batch_len: (cfg.horizon - cfg.warmup) / cfg.batches as f64,
            levels: vec![Piecewise::default(); cfg.levels + 1],
            jobs: Piecewise::default(),
            level_batches: Vec::with_capacity(cfg.batches),
            l1_batches: Vec::with_capacity(cfg.batches),
            token_time: vec![0.0; capacity + 1],
            token_state: (0, 0.0),
            waits: WaitAccumulator::new(cfg.batches),
            counts: EventCounts::default(),
            rejected_intensity: 0.0,
        }
    }

    fn begin(&mut self, t: f64, state: &SimState) {
        for (i, p) in self.levels.iter_mut().enumerate() {
            *p = Piecewise::start(state.level_count(i) as f64, t);
        }
        self.jobs = Piecewise::start(state.total_jobs() as f64, t);
        self.token_state = (state.tokens(), t);
    }

    fn close_batch(&mut self, t: f64) {
        let scale = 1.0 / (self.n * self.batch_len);
        let row: Vec<f64> = self.levels.iter_mut().map(|p| p.take(t) * scale).collect();
        self.level_batches.push(row);
        self.l1_batches.push(self.jobs.take(t) * scale);
        self.flush_tokens(t);
    }

    fn flush_tokens(&mut self, t: f64) {
        let (m, last) = self.token_state;
        self.token_time[m] += t - last;
        self.token_state = (m, t);
    }

    fn record(&mut self, t: f64, event: &Event, state: &SimState) {
        match *event {
            Event::Arrival { queue_before, .. } => {
                self.counts.arrivals += 1;
                let level = queue_before as usize + 1;
                if let Some(p) = self.levels.get_mut(level) {
                    p.set(t, state.level_count(level) as f64);
                }
                self.jobs.set(t, state.total_jobs() as f64);
            }
            Event::Departure {
                queue_before,
                token_added,
                ..
            } => {
                self.counts.departures += 1;
                if token_added {
                    self.counts.idle_notifications += 1;
                }
                let level = queue_before as usize;
                if let Some(p) = self.levels.get_mut(level) {
                    p.set(t, state.level_count(level) as f64);
                }
                self.jobs.set(t, state.total_jobs() as f64);
            }
            Event::Message { .. } => self.counts.accepted_messages += 1,
        }
        if state.tokens() != self.token_state.0 {
            self.flush_tokens(t);
            self.token_state.0 = state.tokens();
        }
    }

    fn batch_of(&self, arrival: f64) -> usize {
        ((arrival - self.warmup) / self.batch_len) as usize
    }
}

/// Simulates from the empty state and collects steady-state statistics over
/// `[warmup, horizon]`.
pub fn run_steady_state(
    params: &SystemParams,
    config: &RunConfig,
    seed: u64,
) -> Result<SteadyStateRun, SimError> {
    let params = params.validate()?;
    config.validate()?;
    let regime = params.regime;
    let mut state = SimState::empty(params.n, params.capacity());
    prepare(&mut state, &regime);
    let mut clock = EventClock::new(&params, seed);
    let mut col = Collector::new(config, params.n, params.capacity());
    let mut arrivals: Vec<VecDeque<f64>> = vec![VecDeque::new(); params.n];

    let boundaries: Vec<f64> = (0..=config.batches)
        .map(|b| {
            if b == config.batches {
                config.horizon
            } else {
                config.warmup + b as f64 * col.batch_len
            }
        })
        .collect();
    let mut next = 0usize;
    let mut t = 0.0f64;

    loop {
        let rates = clock.rates(&state, &regime);
        let e: f64 = Exp1.sample(clock.rng());
        let t_next = t + e / rates.total();

        if rates.rejected > 0.0 {
            let lo = t.max(config.warmup);
            let hi = t_next.min(config.horizon);
            if hi > lo {
                col.rejected_intensity += rates.rejected * (hi - lo);
            }
        }
        while next < boundaries.len() && boundaries[next] <= t_next {
            let b = boundaries[next];
            if next == 0 {
                col.begin(b, &state);
            } else {
                col.close_batch(b);
            }
            next += 1;
        }
        if next == boundaries.len() {
            break;
        }

        let event = fire(&mut state, &mut clock, &regime);
        t = t_next;
        let collecting = next > 0;
        match event {
            Event::Arrival {
                server,
                queue_before,
                ..
            } => {
                arrivals[server].push_back(t);
                if queue_before == 0 && collecting {
                    col.waits.push(col.batch_of(t), 0.0);
                }
            }
            Event::Departure {
                server,
                queue_before,
                ..
            } => {
                arrivals[server].pop_front();
                if queue_before > 1 {
                    let a = arrivals[server][0];
                    if a >= config.warmup {
                        col.waits.push(col.batch_of(a), t - a);
                    }
                }
            }
            Event::Message { .. } => {}
        }
        if collecting {
            col.record(t, &event, &state);
        }
    }
    if cfg!(debug_assertions) {
        state.check_invariants();
    }

    if col.rejected_intensity > 0.0 {
        let poisson = Poisson::new(col.rejected_intensity).expect("positive intensity");
        col.counts.rejected_messages = poisson.sample(clock.rng()) as u64;
    }
    if col.waits.count() < config.min_samples {
        return Err(SimError::UnderSampled {
            got: col.waits.count(),
            need: config.min_samples,
        });
    }

    let observed_time = config.horizon - config.warmup;
    let k = config.levels;
    let mut mean = Vec::with_capacity(k + 1);
    let mut half_width = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let column: Vec<f64> = col.level_batches.iter().map(|row| row[i]).collect();
        let (m, h) = mean_and_half_width(&column);
        mean.push(m);
        half_width.push(h);
    }
    mean[0] = 1.0;
    half_width[0] = 0.0;
    let (mean_l1, l1_half_width) = mean_and_half_width(&col.l1_batches);
    let fractions = col.token_time.iter().map(|x| x / observed_time).collect();

    Ok(SteadyStateRun {
        params,
        seed,
        config: *config,
        waits: col.waits.finish(),
        occupancy: OccupancySampler {
            mean,
            half_width,
            mean_l1,
            l1_half_width,
            duration: observed_time,
        },
        tokens: TokenHistogram { fractions },
        counts: col.counts,
        observed_time,
    })
}

/// Sampled path of the empirical occupancy and the token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    pub params: SystemParams,
    pub seed: u64,
    pub times: Vec<f64>,
    pub occupancy: Vec<OccupancyVector>,
    pub tokens: Vec<usize>,
}

/// Starts from the level-filled configuration matching `initial` and records
/// `S^n` (levels `1..=levels`) every `sample_interval` up to `horizon`.
pub fn run_trajectory(
    params: &SystemParams,
    initial: &OccupancyVector,
    horizon: f64,
    sample_interval: f64,
    levels: usize,
    seed: u64,
) -> Result<TrajectoryRun, SimError> {
    let params = params.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidRun(format!("horizon must be nonnegative, got {horizon}")));
    }
    if !(sample_interval > 0.0) {
        return Err(SimError::InvalidRun("sample interval must be positive".into()));
    }
    let regime = params.regime;
    let mut state = SimState::from_occupancy(params.n, params.capacity(), initial);
    prepare(&mut state, &regime);
    let mut clock = EventClock::new(&params, seed);

    let samples = (horizon / sample_interval + 1e-9).floor() as usize;
    let sample_times: Vec<f64> = (0..=samples).map(|k| k as f64 * sample_interval).collect();
    let mut out = TrajectoryRun {
        params,
        seed,
        times: Vec::with_capacity(sample_times.len()),
        occupancy: Vec::with_capacity(sample_times.len()),
        tokens: Vec::with_capacity(sample_times.len()),
    };
    let mut next = 0usize;
    let mut t = 0.0f64;
    loop {
        let e: f64 = Exp1.sample(clock.rng());
        let t_next = t + e / clock.rates(&state, &regime).total();
        while next < sample_times.len() && sample_times[next] <= t_next {
            out.times.push(sample_times[next]);
            out.occupancy.push(state.occupancy(levels));
            out.tokens.push(state.tokens());
            next += 1;
        }
        if next == sample_times.len() {
            break;
        }
        fire(&mut state, &mut clock, &regime);
        t = t_next;
    }
    Ok(out)
}

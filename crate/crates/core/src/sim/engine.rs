//! Competing-exponential-clock event generation for the n-server chain.
//!
//! Three rate classes are active in every state: arrivals (`lambda n`),
//! service completions (one per busy server) and idle-server messages
//! (`mu(n)` per idle server whose identity is not stored). A message sent
//! while the memory is full leaves the state unchanged; such self-loops are
//! not generated as events but exposed through [`Rates::rejected`] so that
//! callers can account for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::state::SimState;
use crate::model::{Regime, SystemParams};

/// Rates of the state-changing event classes, plus the rate of rejected
/// messages (self-loops).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub arrival: f64,
    pub service: f64,
    pub message: f64,
    pub rejected: f64,
}

impl Rates {
    pub fn total(&self) -> f64 {
        self.arrival + self.service + self.message
    }
}

/// Sampling context for the next event: rate constants and the generator.
#[derive(Debug, Clone)]
pub struct EventClock {
    arrival_rate: f64,
    idle_rate: f64,
    rng: ChaCha8Rng,
}

impl EventClock {
    pub fn new(params: &SystemParams, seed: u64) -> Self {
        EventClock {
            arrival_rate: params.lambda * params.n as f64,
            idle_rate: params.message_rate(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn rates(&self, state: &SimState, policy: &Regime) -> Rates {
        let (message, rejected) = if policy.uses_tokens() {
            let r = self.idle_rate * state.idle_untokened().len() as f64;
            if state.tokens() < state.capacity() {
                (r, 0.0)
            } else {
                (0.0, r)
            }
        } else {
            (0.0, 0.0)
        };
        Rates {
            arrival: self.arrival_rate,
            service: state.busy().len() as f64,
            message,
            rejected,
        }
    }

    /// Samples the holding time in `state`.
    pub fn holding_time(&mut self, state: &SimState, policy: &Regime) -> f64 {
        let total = self.rates(state, policy).total();
        let e: f64 = Exp1.sample(&mut self.rng);
        e / total
    }
}

/// The transition applied by one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// A job joined `server`; `token` is set when a stored token was used.
    Arrival {
        server: usize,
        queue_before: u32,
        token: bool,
    },
    /// A job left `server`; `token_added` is set when the server registered
    /// itself immediately on becoming idle (PULL).
    Departure {
        server: usize,
        queue_before: u32,
        token_added: bool,
    },
    /// An idle server's message was stored as a token.
    Message { server: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub event: Event,
    pub elapsed: f64,
}

/// Puts the state into the policy's canonical form (PULL registers every
/// idle server).
pub fn prepare(state: &mut SimState, policy: &Regime) {
    if matches!(policy, Regime::Pull) {
        let idle: Vec<usize> = state.idle_untokened().iter().collect();
        for server in idle {
            state.add_token(server);
        }
    }
}

/// Samples and applies exactly one state-changing transition.
pub fn step(state: &mut SimState, clock: &mut EventClock, policy: &Regime) -> Step {
    let elapsed = clock.holding_time(state, policy);
    let event = fire(state, clock, policy);
    Step { event, elapsed }
}

/// Chooses the event class proportionally to its rate and applies it.
pub fn fire(state: &mut SimState, clock: &mut EventClock, policy: &Regime) -> Event {
    let rates = clock.rates(state, policy);
    let u = clock.rng.random::<f64>() * rates.total();
    if u < rates.arrival {
        arrive(state, clock, policy)
    } else if u < rates.arrival + rates.service || rates.message == 0.0 {
        let server = state.busy().sample(&mut clock.rng);
        let queue_before = state.pop_job(server);
        let token_added = queue_before == 1 && matches!(policy, Regime::Pull);
        if token_added {
            state.add_token(server);
        }
        Event::Departure {
            server,
            queue_before,
            token_added,
        }
    } else {
        let server = state.idle_untokened().sample(&mut clock.rng);
        state.add_token(server);
        Event::Message { server }
    }
}

fn arrive(state: &mut SimState, clock: &mut EventClock, policy: &Regime) -> Event {
    let rng = &mut clock.rng;
    let (server, token) = match *policy {
        Regime::PowerOfD { d } => (dispatch_power_of_d(state, d, rng), false),
        Regime::Pull => {
            let server = dispatch_pull(state, rng);
            (server, state.token_set().contains(server))
        }
        Regime::RandomRouting => (rng.random_range(0..state.n()), false),
        _ => {
            if state.tokens() > 0 {
                (state.token_set().sample(rng), true)
            } else {
                (rng.random_range(0..state.n()), false)
            }
        }
    };
    let queue_before = state.push_job(server);
    Event::Arrival {
        server,
        queue_before,
        token,
    }
}

/// Samples `d` servers with replacement and returns one with the shortest
/// queue, ties broken uniformly over the minimal draws.
pub fn dispatch_power_of_d<R: Rng + ?Sized>(state: &SimState, d: usize, rng: &mut R) -> usize {
    let n = state.n();
    let mut best = rng.random_range(0..n);
    let mut best_len = state.queue(best);
    let mut ties = 1u32;
    for _ in 1..d {
        let j = rng.random_range(0..n);
        let q = state.queue(j);
        if q < best_len {
            best = j;
            best_len = q;
            ties = 1;
        } else if q == best_len {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best = j;
            }
        }
    }
    best
}

/// Uniform idle server if one exists, otherwise a uniform server.
pub fn dispatch_pull<R: Rng + ?Sized>(state: &SimState, rng: &mut R) -> usize {
    let free = state.idle_untokened().len();
    let idle = free + state.tokens();
    if idle == 0 {
        return rng.random_range(0..state.n());
    }
    let k = rng.random_range(0..idle);
    if k < free {
        state.idle_untokened().get(k)
    } else {
        state.token_set().get(k - free)
    }
}

use rand::Rng;

use crate::model::OccupancyVector;

const ABSENT: u32 = u32::MAX;

/// Subset of `0..n` with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    members: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexSet {
    pub fn new(n: usize) -> Self {
        IndexSet {
            members: Vec::with_capacity(n),
            pos: vec![ABSENT; n],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.pos[i] != ABSENT
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(!self.contains(i));
        self.pos[i] = self.members.len() as u32;
        self.members.push(i as u32);
    }

    pub fn remove(&mut self, i: usize) {
        let p = self.pos[i];
        debug_assert!(p != ABSENT);
        let last = self.members.pop().expect("remove from empty set");
        if last as usize != i {
            self.members[p as usize] = last;
            self.pos[last as usize] = p;
        }
        self.pos[i] = ABSENT;
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.members[rng.random_range(0..self.members.len())] as usize
    }

    /// The `k`-th member in internal order.
    pub fn get(&self, k: usize) -> usize {
        self.members[k] as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|&i| i as usize)
    }
}

/// Exact CTMC state: queue lengths and the dispatcher's token store.
///
/// Every server is in exactly one of `busy`, `idle_free` (idle, no token)
/// or `tokened` (idle, token held by the dispatcher).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    queues: Vec<u32>,
    capacity: usize,
    busy: IndexSet,
    idle_free: IndexSet,
    tokened: IndexSet,
    /// `level_counts[i]` = number of servers with at least `i` jobs.
    level_counts: Vec<u64>,
    total_jobs: u64,
}

impl SimState {
    /// All servers idle, no tokens.
    pub fn empty(n: usize, capacity: usize) -> Self {
        let mut idle_free = IndexSet::new(n);
        for i in 0..n {
            idle_free.insert(i);
        }
        SimState {
            queues: vec![0; n],
            capacity,
            busy: IndexSet::new(n),
            idle_free,
            tokened: IndexSet::new(n),
            level_counts: vec![n as u64],
            total_jobs: 0,
        }
    }

    /// Deterministic level filling: each `s_i` is rounded to the nearest
    /// multiple of `1/n`, the counts are re-monotonized by cumulative minima,
    /// and server `j` receives `#{i >= 1 : j < round(n s_i)}` jobs.
    pub fn from_occupancy(n: usize, capacity: usize, s: &OccupancyVector) -> Self {
        let mut counts = Vec::with_capacity(s.truncation() + 1);
        let mut prev = n;
        for i in 0..=s.truncation() {
            let c = ((s.get(i) * n as f64).round() as usize).min(prev);
            counts.push(c);
            prev = c;
        }
        counts[0] = n;
        let mut state = SimState::empty(n, capacity);
        for (level, &c) in counts.iter().enumerate().skip(1) {
            for server in 0..c {
                debug_assert_eq!(state.queues[server] as usize, level - 1);
                state.push_job(server);
            }
        }
        state
    }

    pub fn n(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queues(&self) -> &[u32] {
        &self.queues
    }

    pub fn queue(&self, i: usize) -> u32 {
        self.queues[i]
    }

    /// Token count M.
    pub fn tokens(&self) -> usize {
        self.tokened.len()
    }

    pub fn token_set(&self) -> &IndexSet {
        &self.tokened
    }

    pub fn busy(&self) -> &IndexSet {
        &self.busy
    }

    /// Idle servers whose identity is not in the dispatcher memory.
    pub fn idle_untokened(&self) -> &IndexSet {
        &self.idle_free
    }

    pub fn idle_count(&self) -> usize {
        self.idle_free.len() + self.tokened.len()
    }

    /// Number of servers with at least `i` jobs.
    pub fn level_count(&self, i: usize) -> u64 {
        self.level_counts.get(i).copied().unwrap_or(0)
    }

    pub fn max_level(&self) -> usize {
        self.level_counts.len() - 1
    }

    pub fn total_jobs(&self) -> u64 {
        self.total_jobs
    }

    /// Empirical occupancy `S_i = (1/n) #{j : Q_j >= i}` up to level `k`.
    pub fn occupancy(&self, k: usize) -> OccupancyVector {
        let n = self.n() as f64;
        OccupancyVector::project((0..=k).map(|i| self.level_count(i) as f64 / n).collect())
    }

    /// Adds a job at `server`; returns the previous queue length.
    pub(crate) fn push_job(&mut self, server: usize) -> u32 {
        let q = self.queues[server];
        if q == 0 {
            if self.tokened.contains(server) {
                self.tokened.remove(server);
            } else {
                self.idle_free.remove(server);
            }
            self.busy.insert(server);
        }
        self.queues[server] = q + 1;
        let level = q as usize + 1;
        if level == self.level_counts.len() {
            self.level_counts.push(0);
        }
        self.level_counts[level] += 1;
        self.total_jobs += 1;
        q
    }

    /// Completes a job at busy `server`; returns the previous queue length.
    /// A server that becomes idle joins the untokened idle set.
    pub(crate) fn pop_job(&mut self, server: usize) -> u32 {
        let q = self.queues[server];
        debug_assert!(q > 0);
        self.level_counts[q as usize] -= 1;
        if q as usize == self.level_counts.len() - 1 && self.level_counts[q as usize] == 0 {
            self.level_counts.pop();
        }
        self.queues[server] = q - 1;
        self.total_jobs -= 1;
        if q == 1 {
            self.busy.remove(server);
            self.idle_free.insert(server);
        }
        q
    }

    /// Moves an idle untokened server into the dispatcher memory.
    pub(crate) fn add_token(&mut self, server: usize) {
        debug_assert!(self.tokened.len() < self.capacity);
        self.idle_free.remove(server);
        self.tokened.insert(server);
    }

    /// Panics with a description of the first broken invariant.
    pub fn check_invariants(&self) {
        let n = self.n();
        assert!(self.tokens() <= self.capacity, "M={} > c(n)={}", self.tokens(), self.capacity);
        assert_eq!(self.busy.len() + self.idle_free.len() + self.tokened.len(), n);
        let mut total = 0u64;
        for (i, &q) in self.queues.iter().enumerate() {
            total += q as u64;
            let memberships = [self.busy.contains(i), self.idle_free.contains(i), self.tokened.contains(i)];
            assert_eq!(memberships.iter().filter(|&&b| b).count(), 1, "server {i} in several sets");
            if q > 0 {
                assert!(self.busy.contains(i), "server {i} has {q} jobs but is not busy");
            } else {
                assert!(!self.busy.contains(i), "idle server {i} marked busy");
            }
        }
        assert_eq!(total, self.total_jobs);
        for (level, &c) in self.level_counts.iter().enumerate() {
            let expected = self.queues.iter().filter(|&&q| q as usize >= level).count() as u64;
            assert_eq!(c, expected, "level count {level}");
        }
    }
}

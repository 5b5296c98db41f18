use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{Sample, Trace, TraceDims, TraceLayout};
use super::{RateTree, SimState};
use crate::model::SystemInstance;
use crate::policies::{PolicySpec, Router};
use crate::{Error, Result};

const PRELOAD_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Empty,
    /// Every server that can serve some task type starts with one task.
    AllOne,
    /// Even-indexed servers start with one task.
    HalfHalf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Assignments to a server whose raw rate for the task is below this count as bad.
    pub bad_rate_threshold: f64,
    /// Run a full invariant audit every this many events (and at the end).
    pub audit_every: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            bad_rate_threshold: 0.5,
            audit_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub horizon: f64,
    pub seed: u64,
    pub init: InitialState,
    /// Ascending times in `[0, horizon]`.
    pub sample_times: Vec<f64>,
    pub options: SimOptions,
}

/// Exact simulation of the system under `policy` until `horizon`.
///
/// The next event is drawn from the race between all arrival streams and the head-of-line
/// service clocks of busy servers (total-rate sampling over a partial-sum tree), so one
/// event costs `O(log N)` plus the policy's routing cost. All randomness comes from one
/// ChaCha8 stream seeded with `params.seed`.
pub fn simulate(
    instance: &SystemInstance,
    policy: &PolicySpec,
    layout: &TraceLayout,
    params: &SimParams,
) -> Result<Trace> {
    let router = Router::new(instance, policy)?;
    simulate_with_router(&router, layout, params)
}

pub fn simulate_with_router(
    router: &Router,
    layout: &TraceLayout,
    params: &SimParams,
) -> Result<Trace> {
    let instance = router.instance();
    validate(instance, layout, params)?;
    let mut run = Run::new(router, layout, params);
    run.preload(params.init);
    run.execute()?;
    Ok(run.finish())
}

fn validate(instance: &SystemInstance, layout: &TraceLayout, params: &SimParams) -> Result<()> {
    if !(params.horizon > 0.0 && params.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", params.horizon)));
    }
    if layout.servers() != instance.servers() {
        return Err(Error::InvalidArgument("trace layout built for another instance".into()));
    }
    let times = &params.sample_times;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidArgument("sample times must be finite, >= 0 and ascending".into()));
    }
    if let Some(&last) = times.last() {
        if last > params.horizon {
            return Err(Error::InvalidArgument(format!(
                "sample time {last} is beyond the horizon {}",
                params.horizon
            )));
        }
    }
    if instance.arrival_rates().iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidRate("non-finite arrival rate".into()));
    }
    Ok(())
}

/// Integer aggregates with lazily integrated time averages.
struct Aggregates {
    count: Vec<i64>,
    integral: Vec<f64>,
    last: Vec<f64>,
}

impl Aggregates {
    fn new(len: usize) -> Self {
        Self {
            count: vec![0; len],
            integral: vec![0.0; len],
            last: vec![0.0; len],
        }
    }

    #[inline]
    fn bump(&mut self, idx: usize, delta: i64, t: f64) {
        self.integral[idx] += self.count[idx] as f64 * (t - self.last[idx]);
        self.last[idx] = t;
        self.count[idx] += delta;
    }

    fn flush(&mut self, t: f64) {
        for idx in 0..self.count.len() {
            self.bump(idx, 0, t);
        }
    }
}

struct Run<'r, 'a> {
    router: &'r Router<'a>,
    layout: &'r TraceLayout,
    params: &'r SimParams,
    dims: TraceDims,
    rng: ChaCha8Rng,
    state: SimState,
    tree: RateTree,
    agg: Aggregates,
    arrival_cum: Vec<f64>,
    clock: f64,
    events: u64,
    preloaded: u64,
    arrivals: u64,
    departures: u64,
    busy_assignments: u64,
    bad_assignments: u64,
    samples: Vec<Sample>,
}

impl<'r, 'a> Run<'r, 'a> {
    fn new(router: &'r Router<'a>, layout: &'r TraceLayout, params: &'r SimParams) -> Self {
        let instance = router.instance();
        let n = instance.servers();
        let dims = layout.dims().clone();
        let mut agg = Aggregates::new(dims.tail_len() + dims.busy_len() + 1);
        for j in 0..n {
            let (slot, m) = layout.block_of(j);
            agg.count[dims.tail_index(slot, m, 0)] += 1;
        }
        let arrival_cum = instance
            .arrival_rates()
            .iter()
            .scan(0.0, |acc, &l| {
                *acc += l;
                Some(*acc)
            })
            .collect();
        Self {
            router,
            layout,
            params,
            dims,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            state: SimState::new(n, router.pools()),
            tree: RateTree::new(n),
            agg,
            arrival_cum,
            clock: 0.0,
            events: 0,
            preloaded: 0,
            arrivals: 0,
            departures: 0,
            busy_assignments: 0,
            bad_assignments: 0,
            samples: Vec::with_capacity(params.sample_times.len()),
        }
    }

    fn busy_offset(&self) -> usize {
        self.dims.tail_len()
    }

    fn queue_offset(&self) -> usize {
        self.dims.tail_len() + self.dims.busy_len()
    }

    fn preload(&mut self, init: InitialState) {
        let n = self.router.instance().servers();
        let servers: Vec<usize> = match init {
            InitialState::Empty => return,
            InitialState::AllOne => (0..n).collect(),
            InitialState::HalfHalf => (0..n).step_by(2).collect(),
        };
        for j in servers {
            if let Some(i) = self.preload_type(j) {
                self.place(i, j);
                self.preloaded += 1;
            }
        }
    }

    /// Uniform task type among those the server can serve under the policy's rates.
    fn preload_type(&mut self, j: usize) -> Option<usize> {
        let w = self.router.instance().dispatchers();
        for _ in 0..PRELOAD_TRIES {
            let i = self.rng.gen_range(0..w);
            if self.router.effective_rate(i, j) > 0.0 {
                return Some(i);
            }
        }
        let compatible: Vec<usize> = (0..w).filter(|&i| self.router.effective_rate(i, j) > 0.0).collect();
        (!compatible.is_empty()).then(|| compatible[self.rng.gen_range(0..compatible.len())])
    }

    fn place(&mut self, i: usize, j: usize) -> usize {
        let t = self.clock;
        let rate = self.router.effective_rate(i, j);
        debug_assert!(rate > 0.0, "task {i} placed on incompatible server {j}");
        let before = self.state.push(j, i, rate);
        let (slot, m) = self.layout.block_of(j);
        if before < self.dims.levels() - 1 {
            self.agg.bump(self.dims.tail_index(slot, m, before + 1), 1, t);
        }
        let q = self.queue_offset();
        self.agg.bump(q, 1, t);
        if before == 0 {
            self.tree.set(j, rate);
            let idx = self.busy_offset() + self.dims.busy_index(m, self.layout.rate_class(i, j));
            self.agg.bump(idx, 1, t);
        }
        before
    }

    fn depart(&mut self, j: usize) {
        let t = self.clock;
        let rate = self.tree.get(j);
        let before = self.state.queue(j).len();
        let i = self.state.pop(j, rate);
        let (slot, m) = self.layout.block_of(j);
        if before < self.dims.levels() {
            self.agg.bump(self.dims.tail_index(slot, m, before), -1, t);
        }
        let q = self.queue_offset();
        self.agg.bump(q, -1, t);
        let busy = self.busy_offset();
        self.agg.bump(busy + self.dims.busy_index(m, self.layout.rate_class(i, j)), -1, t);
        match self.state.head(j) {
            Some(next) => {
                self.tree.set(j, self.router.effective_rate(next, j));
                self.agg.bump(busy + self.dims.busy_index(m, self.layout.rate_class(next, j)), 1, t);
            }
            None => self.tree.set(j, 0.0),
        }
        self.departures += 1;
    }

    fn arrive(&mut self, i: usize) {
        let j = self.router.route(&self.state, i, &mut self.rng);
        let raw = self.router.instance().rate(i, j);
        if raw < self.params.options.bad_rate_threshold {
            self.bad_assignments += 1;
        }
        if self.place(i, j) > 0 {
            self.busy_assignments += 1;
        }
        self.arrivals += 1;
    }

    fn record(&mut self, time: f64) {
        self.agg.flush(time);
        let n = self.router.instance().servers() as f64;
        let (b, q) = (self.busy_offset(), self.queue_offset());
        let scaled = |v: &[i64]| v.iter().map(|&c| c as f64 / n).collect::<Vec<_>>();
        let scaled_f = |v: &[f64]| v.iter().map(|&c| c / n).collect::<Vec<_>>();
        self.samples.push(Sample {
            time,
            tail: scaled(&self.agg.count[..b]),
            busy: scaled(&self.agg.count[b..q]),
            queue: self.agg.count[q] as f64 / n,
            tail_integral: scaled_f(&self.agg.integral[..b]),
            busy_integral: scaled_f(&self.agg.integral[b..q]),
            queue_integral: self.agg.integral[q] / n,
            arrivals: self.arrivals,
            departures: self.departures,
            busy_assignments: self.busy_assignments,
            bad_assignments: self.bad_assignments,
        });
    }

    fn execute(&mut self) -> Result<()> {
        let horizon = self.params.horizon;
        let lambda_total = self.arrival_cum.last().copied().unwrap_or(0.0);
        let mut next_sample = 0;
        loop {
            let total = lambda_total + self.tree.total();
            let t_next = if total > 0.0 {
                let u: f64 = self.rng.gen();
                self.clock - (1.0 - u).ln() / total
            } else {
                f64::INFINITY
            };
            let times = &self.params.sample_times;
            while next_sample < times.len() && times[next_sample] <= t_next.min(horizon) {
                self.record(times[next_sample]);
                next_sample += 1;
            }
            if t_next > horizon {
                break;
            }
            self.clock = t_next;
            let u = self.rng.gen::<f64>() * total;
            if u < lambda_total {
                let i = self
                    .arrival_cum
                    .partition_point(|&c| c <= u)
                    .min(self.arrival_cum.len() - 1);
                self.arrive(i);
            } else {
                let j = self.tree.find(u - lambda_total);
                self.depart(j);
            }
            self.events += 1;
            if let Some(every) = self.params.options.audit_every {
                if self.events % every.max(1) == 0 {
                    self.audit()?;
                }
            }
        }
        if self.params.options.audit_every.is_some() {
            self.audit()?;
        }
        Ok(())
    }

    fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invariant(format!("t={}: {msg}", self.clock)));
        if let Err(msg) = self.state.audit(|i, j| self.router.effective_rate(i, j)) {
            return fail(msg);
        }
        if self.preloaded + self.arrivals != self.departures + self.state.in_system() {
            return fail(format!(
                "conservation: {} preloaded + {} arrivals != {} departures + {} in system",
                self.preloaded,
                self.arrivals,
                self.departures,
                self.state.in_system()
            ));
        }
        let mut tail = vec![0i64; self.dims.tail_len()];
        let mut busy = vec![0i64; self.dims.busy_len()];
        for j in 0..self.state.servers() {
            let (slot, m) = self.layout.block_of(j);
            let z = self.state.queue(j).len();
            for l in 0..=z.min(self.dims.levels() - 1) {
                tail[self.dims.tail_index(slot, m, l)] += 1;
            }
            let expected_rate = match self.state.head(j) {
                Some(i) => {
                    busy[self.dims.busy_index(m, self.layout.rate_class(i, j))] += 1;
                    self.router.effective_rate(i, j)
                }
                None => 0.0,
            };
            if self.tree.get(j) != expected_rate {
                return fail(format!("service clock of server {j} has the wrong rate"));
            }
        }
        let b = self.busy_offset();
        if tail[..] != self.agg.count[..b] || busy[..] != self.agg.count[b..b + busy.len()] {
            return fail("aggregate counts differ from recomputation".into());
        }
        for slot in 0..self.dims.slots() {
            for m in 0..self.dims.server_types {
                let level = |l| tail[self.dims.tail_index(slot, m, l)];
                if (1..self.dims.levels()).any(|l| level(l) > level(l - 1)) {
                    return fail(format!("tail counts not monotone in block ({slot}, {m})"));
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Trace {
        Trace {
            dims: self.dims,
            servers: self.state.servers(),
            horizon: self.params.horizon,
            seed: self.params.seed,
            bad_rate_threshold: self.params.options.bad_rate_threshold,
            preloaded: self.preloaded,
            samples: self.samples,
            final_queues: (0..self.state.servers())
                .map(|j| self.state.queue(j).iter().copied().collect())
                .collect(),
        }
    }
}

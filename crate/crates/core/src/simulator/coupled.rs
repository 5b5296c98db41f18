//! Two reservation-pruned systems driven by one random stream so that the one with the
//! larger rates never holds more work, block by block.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{IndexedSet, RateTree};
use crate::model::SystemInstance;
use crate::policies::ReservationPlan;
use crate::{Error, Result};

/// Violations kept in the log; later ones are only counted.
const LOG_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Shared arrivals, case-split routing, and departures of the slower system thinned
    /// from those of the faster one.
    Faithful,
    /// Same arrivals and routing, but the two systems' service clocks run independently.
    /// Dominance is not preserved; used to show the check can fail.
    IndependentDepartures,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceViolation {
    pub time: f64,
    pub event: u64,
    pub h: usize,
    pub m: usize,
    /// Queue-length level `l`: the faster system has more servers with at least `l` tasks.
    pub level: usize,
    pub count: usize,
    pub count_prime: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    /// True iff no violation occurred at any event.
    pub dominated: bool,
    pub events: u64,
    pub violation_count: u64,
    pub violations: Vec<DominanceViolation>,
    pub final_lengths: Vec<usize>,
    pub final_lengths_prime: Vec<usize>,
}

struct System<'a> {
    instance: &'a SystemInstance,
    queues: Vec<VecDeque<u32>>,
    idle: Vec<IndexedSet>,
    /// `tails[block][l]` = servers of the block with at least `l` tasks (`l >= 1`, index `l - 1`).
    tails: Vec<Vec<usize>>,
}

impl<'a> System<'a> {
    fn new(instance: &'a SystemInstance, plan: &ReservationPlan, blocks: usize) -> Self {
        let n = instance.servers();
        let idle = (0..plan.classes())
            .map(|h| {
                let mut set = IndexedSet::with_capacity(n);
                plan.class_pool(h).iter().for_each(|&j| {
                    set.insert(j);
                });
                set
            })
            .collect();
        Self {
            instance,
            queues: vec![VecDeque::new(); n],
            idle,
            tails: vec![Vec::new(); blocks],
        }
    }

    fn len(&self, j: usize) -> usize {
        self.queues[j].len()
    }

    fn head_rate(&self, j: usize) -> f64 {
        self.queues[j]
            .front()
            .map_or(0.0, |&i| self.instance.rate(i as usize, j))
    }

    fn push(&mut self, j: usize, i: usize, h: usize, block: usize) {
        let before = self.queues[j].len();
        self.queues[j].push_back(i as u32);
        if before == 0 {
            self.idle[h].remove(j);
        }
        let tail = &mut self.tails[block];
        if tail.len() <= before {
            tail.push(0);
        }
        tail[before] += 1;
    }

    fn pop(&mut self, j: usize, h: usize, block: usize) {
        let before = self.queues[j].len();
        self.queues[j].pop_front().expect("departure from an empty queue");
        if before == 1 {
            self.idle[h].insert(j);
        }
        self.tails[block][before - 1] -= 1;
    }
}

/// Runs `g` and `gprime` (same dispatchers, servers and arrival rates; `gprime` rates no
/// larger on any reserved edge) under ICRD with the same reservation, from empty, and
/// checks after every event that each block of `g` has at most as many servers with at
/// least `l` tasks as the same block of `gprime`, for every `l`.
pub fn coupled_dominance_run(
    g: &SystemInstance,
    gprime: &SystemInstance,
    plan: &ReservationPlan,
    horizon: f64,
    seed: u64,
    mode: CouplingMode,
) -> Result<CoupledOutcome> {
    check_preconditions(g, gprime, plan, horizon)?;
    let n = g.servers();
    let m_count = plan.server_types();
    let blocks = plan.classes() * m_count;
    let block_of = |j: usize| plan.block_of_server(j).map(|(h, m)| (h, h * m_count + m));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fast = System::new(g, plan, blocks);
    let mut slow = System::new(gprime, plan, blocks);
    let mut clocks = RateTree::new(n);
    let cum: Vec<f64> = g
        .arrival_rates()
        .iter()
        .scan(0.0, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let lambda_total = cum.last().copied().unwrap_or(0.0);

    let mut outcome = CoupledOutcome {
        dominated: true,
        events: 0,
        violation_count: 0,
        violations: Vec::new(),
        final_lengths: Vec::new(),
        final_lengths_prime: Vec::new(),
    };
    let mut t = 0.0;
    loop {
        let total = lambda_total + clocks.total();
        if total <= 0.0 {
            break;
        }
        t -= (1.0 - rng.gen::<f64>()).ln() / total;
        if t > horizon {
            break;
        }
        let u = rng.gen::<f64>() * total;
        let touched = if u < lambda_total {
            let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            let h = plan.class_of_dispatcher(i);
            let (j, j_prime) = coupled_pick(&fast.idle[h], &slow.idle[h], plan.class_pool(h), &mut rng);
            let (_, b) = block_of(j).expect("pool servers are reserved");
            let (_, b_prime) = block_of(j_prime).expect("pool servers are reserved");
            fast.push(j, i, h, b);
            slow.push(j_prime, i, h, b_prime);
            [Some(j), Some(j_prime)]
        } else {
            let j = clocks.find(u - lambda_total);
            let (h, b) = block_of(j).expect("only reserved servers are ever busy");
            let (rate, rate_prime) = (fast.head_rate(j), slow.head_rate(j));
            let (fast_leaves, slow_leaves) = match mode {
                CouplingMode::Faithful if fast.len(j) > 0 => {
                    if rate_prime > rate {
                        return Err(Error::Coupling(format!(
                            "slower system serves faster at server {j}: {rate_prime} > {rate}"
                        )));
                    }
                    let thinned = slow.len(j) > 0 && rng.gen::<f64>() * rate < rate_prime;
                    (true, thinned)
                }
                CouplingMode::Faithful => (false, true),
                CouplingMode::IndependentDepartures => {
                    let pick_fast = rng.gen::<f64>() * (rate + rate_prime) < rate;
                    (pick_fast, !pick_fast)
                }
            };
            if fast_leaves {
                fast.pop(j, h, b);
            }
            if slow_leaves {
                slow.pop(j, h, b);
            }
            [Some(j), None]
        };
        for j in touched.into_iter().flatten() {
            let rate = match mode {
                CouplingMode::Faithful if fast.len(j) > 0 => fast.head_rate(j),
                CouplingMode::Faithful => slow.head_rate(j),
                CouplingMode::IndependentDepartures => fast.head_rate(j) + slow.head_rate(j),
            };
            clocks.set(j, rate);
        }
        outcome.events += 1;
        let mut checked = [usize::MAX; 2];
        for (slot, j) in touched.into_iter().enumerate() {
            let Some(j) = j else { continue };
            let (_, b) = block_of(j).expect("reserved");
            if checked.contains(&b) {
                continue;
            }
            checked[slot] = b;
            if let Some(level) = first_violation(&fast.tails[b], &slow.tails[b]) {
                outcome.dominated = false;
                outcome.violation_count += 1;
                if outcome.violations.len() < LOG_LIMIT {
                    outcome.violations.push(DominanceViolation {
                        time: t,
                        event: outcome.events,
                        h: b / m_count,
                        m: b % m_count,
                        level,
                        count: fast.tails[b][level - 1],
                        count_prime: slow.tails[b].get(level - 1).copied().unwrap_or(0),
                    });
                }
            }
        }
    }
    outcome.final_lengths = (0..n).map(|j| fast.len(j)).collect();
    outcome.final_lengths_prime = (0..n).map(|j| slow.len(j)).collect();
    Ok(outcome)
}

fn first_violation(tail: &[usize], tail_prime: &[usize]) -> Option<usize> {
    tail.iter()
        .enumerate()
        .find(|&(l, &c)| c > tail_prime.get(l).copied().unwrap_or(0))
        .map(|(l, _)| l + 1)
}

/// Server choices for one arrival in the faster and slower systems.
fn coupled_pick<R: Rng>(
    idle: &IndexedSet,
    idle_prime: &IndexedSet,
    pool: &[usize],
    rng: &mut R,
) -> (usize, usize) {
    let any = |rng: &mut R| pool[rng.gen_range(0..pool.len())];
    match (idle.sample(rng), idle_prime.is_empty()) {
        // Everyone busy in both: same uniform server.
        (None, true) => {
            let j = any(rng);
            (j, j)
        }
        // Only the faster system has idle servers: independent JIQ choices.
        (Some(j), true) => (j, any(rng)),
        (None, false) => (any(rng), idle_prime.sample(rng).expect("non-empty")),
        // Both have idle servers. When the slower system's idle set is contained in the
        // faster one's, follow the faster choice if possible; the slower choice is still
        // uniform over its own idle set.
        (Some(j), false) => {
            if idle_prime.as_slice().iter().all(|&k| idle.contains(k)) && idle_prime.contains(j) {
                (j, j)
            } else {
                (j, idle_prime.sample(rng).expect("non-empty"))
            }
        }
    }
}

fn check_preconditions(
    g: &SystemInstance,
    gprime: &SystemInstance,
    plan: &ReservationPlan,
    horizon: f64,
) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    if g.servers() != gprime.servers() || g.dispatchers() != gprime.dispatchers() {
        return Err(Error::Coupling("systems differ in size".into()));
    }
    if g.arrival_rates() != gprime.arrival_rates() {
        return Err(Error::Coupling("systems differ in arrival rates".into()));
    }
    if plan.grouping().server_group_of.len() != g.servers()
        || plan.grouping().dispatcher_group_of.len() != g.dispatchers()
    {
        return Err(Error::Coupling("reservation built for another instance".into()));
    }
    for i in 0..g.dispatchers() {
        let h = plan.class_of_dispatcher(i);
        for &j in plan.class_pool(h) {
            let (r, r_prime) = (g.rate(i, j), gprime.rate(i, j));
            if !(r_prime > 0.0) || r_prime > r {
                return Err(Error::Coupling(format!(
                    "edge ({i}, {j}) needs 0 < rate' <= rate, got rate' = {r_prime}, rate = {r}"
                )));
            }
        }
        if g.arrival_rate(i) > 0.0 && plan.class_pool(h).is_empty() {
            return Err(Error::NoCompatibleServer { dispatcher: i });
        }
    }
    Ok(())
}

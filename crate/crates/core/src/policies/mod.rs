//! Routing policies and the capacity reservation that feeds ICRD.

mod reservation;

pub use reservation::{icrd_reserve, icrd_reserve_shrinking, ReservationPlan};

use std::cmp::Ordering;

use rand::Rng;

use crate::criticality::RoutingMatrix;
use crate::model::{group_indices, Grouping, SystemInstance};
use crate::simulator::IndexedSet;
use crate::{Error, Result};

/// Uniform compatible draws try this many rejection samples before falling back to a scan.
const REJECTION_TRIES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// Sample a server group from `p`, then a uniform compatible server in it.
    RandomOpenLoop {
        p: RoutingMatrix,
        w_breaks: Vec<f64>,
        v_breaks: Vec<f64>,
    },
    Jiq,
    Jfiq,
    Jfsq,
    MinDrift,
    /// SPD: sample a server group from `p`, then JIQ inside that group.
    PBasedJiq {
        p: RoutingMatrix,
        w_breaks: Vec<f64>,
        v_breaks: Vec<f64>,
    },
    /// JIQ inside the class's reserved pool, on pruned rates.
    IcrdJiq(ReservationPlan),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomOpenLoop { .. } => "random",
            Self::Jiq => "jiq",
            Self::Jfiq => "jfiq",
            Self::Jfsq => "jfsq",
            Self::MinDrift => "mindrift",
            Self::PBasedJiq { .. } => "spd",
            Self::IcrdJiq(_) => "icrd",
        }
    }
}

/// What a policy may look at when routing.
pub trait StateView {
    fn queue_len(&self, j: usize) -> usize;
    /// Weighted queue length: total expected work queued at `j`.
    fn workload(&self, j: usize) -> f64;
    /// Idle servers of a pool declared by [`Router::pools`].
    fn idle_in_pool(&self, pool: usize) -> &IndexedSet;
}

#[derive(Debug, Clone)]
enum Kind {
    Random { p: RoutingMatrix, grouping: Grouping },
    Jiq,
    Jfiq,
    Jfsq,
    MinDrift,
    PBased { p: RoutingMatrix, grouping: Grouping },
    Icrd(ReservationPlan),
}

/// A policy bound to an instance, with the idle-set pools it expects the state to keep.
#[derive(Debug, Clone)]
pub struct Router<'a> {
    instance: &'a SystemInstance,
    kind: Kind,
    pools: Vec<Vec<usize>>,
    /// Dispatchers compatible with every server; lets the global policies skip checks.
    universal: Vec<bool>,
}

impl<'a> Router<'a> {
    pub fn new(instance: &'a SystemInstance, spec: &PolicySpec) -> Result<Self> {
        let n = instance.servers();
        let universal: Vec<bool> = (0..instance.dispatchers())
            .map(|i| (0..n).all(|j| instance.rate(i, j) > 0.0))
            .collect();
        let (kind, pools) = match spec {
            PolicySpec::Jiq | PolicySpec::Jfiq | PolicySpec::Jfsq | PolicySpec::MinDrift => {
                let kind = match spec {
                    PolicySpec::Jiq => Kind::Jiq,
                    PolicySpec::Jfiq => Kind::Jfiq,
                    PolicySpec::Jfsq => Kind::Jfsq,
                    _ => Kind::MinDrift,
                };
                (kind, vec![(0..n).collect()])
            }
            PolicySpec::RandomOpenLoop { p, w_breaks, v_breaks }
            | PolicySpec::PBasedJiq { p, w_breaks, v_breaks } => {
                let grouping = group_indices(instance, w_breaks, v_breaks)?;
                validate_group_routing(instance, p, &grouping)?;
                let pools = grouping.server_groups.clone();
                let kind = if matches!(spec, PolicySpec::PBasedJiq { .. }) {
                    Kind::PBased { p: p.clone(), grouping }
                } else {
                    Kind::Random { p: p.clone(), grouping }
                };
                (kind, pools)
            }
            PolicySpec::IcrdJiq(plan) => {
                if plan.grouping().dispatcher_group_of.len() != instance.dispatchers()
                    || plan.grouping().server_group_of.len() != n
                {
                    return Err(Error::InvalidArgument(
                        "reservation plan was built for a different instance".into(),
                    ));
                }
                let pools = (0..plan.classes()).map(|h| plan.class_pool(h).to_vec()).collect();
                (Kind::Icrd(plan.clone()), pools)
            }
        };
        let router = Self {
            instance,
            kind,
            pools,
            universal,
        };
        if !matches!(router.kind, Kind::Icrd(_) | Kind::Random { .. } | Kind::PBased { .. }) {
            for i in 0..instance.dispatchers() {
                if !router.universal[i] && (0..n).all(|j| instance.rate(i, j) <= 0.0) {
                    return Err(Error::NoCompatibleServer { dispatcher: i });
                }
            }
        }
        Ok(router)
    }

    pub fn instance(&self) -> &'a SystemInstance {
        self.instance
    }

    /// Server pools whose idle members the state must track, in pool order.
    pub fn pools(&self) -> &[Vec<usize>] {
        &self.pools
    }

    /// Rate the policy sees for `(i, j)`: the pruned rate under ICRD, the raw rate otherwise.
    #[inline]
    pub fn effective_rate(&self, i: usize, j: usize) -> f64 {
        match &self.kind {
            Kind::Icrd(plan) => plan.pruned_rate(self.instance, i, j),
            _ => self.instance.rate(i, j),
        }
    }

    /// Servers a task of type `i` may ever be sent to.
    pub fn candidates(&self, i: usize) -> Vec<usize> {
        match &self.kind {
            Kind::Icrd(plan) => plan.class_pool(plan.class_of_dispatcher(i)).to_vec(),
            _ => (0..self.instance.servers())
                .filter(|&j| self.instance.rate(i, j) > 0.0)
                .collect(),
        }
    }

    pub fn route<S: StateView + ?Sized, R: Rng + ?Sized>(
        &self,
        state: &S,
        i: usize,
        rng: &mut R,
    ) -> usize {
        let inst = self.instance;
        match &self.kind {
            Kind::Jiq => {
                let idle = state.idle_in_pool(0);
                if self.universal[i] {
                    idle.sample(rng)
                        .unwrap_or_else(|| rng.gen_range(0..inst.servers()))
                } else {
                    uniform_compatible(idle.as_slice(), |j| inst.rate(i, j) > 0.0, rng)
                        .or_else(|| self.uniform_compatible_all(i, rng))
                        .expect("validated: dispatcher has a compatible server")
                }
            }
            Kind::Jfiq => {
                let mut best = ArgBest::default();
                for &j in state.idle_in_pool(0).as_slice() {
                    let r = inst.rate(i, j);
                    if r > 0.0 {
                        best.offer(j, [-r, 0.0], rng);
                    }
                }
                if best.is_empty() {
                    for j in 0..inst.servers() {
                        let r = inst.rate(i, j);
                        if r > 0.0 {
                            best.offer(j, [-r, state.queue_len(j) as f64], rng);
                        }
                    }
                }
                best.take()
            }
            Kind::Jfsq => {
                let mut best = ArgBest::default();
                for j in 0..inst.servers() {
                    let r = inst.rate(i, j);
                    if r > 0.0 {
                        best.offer(j, [state.queue_len(j) as f64, -r], rng);
                    }
                }
                best.take()
            }
            Kind::MinDrift => {
                let mut best = ArgBest::default();
                for j in 0..inst.servers() {
                    let r = inst.rate(i, j);
                    if r > 0.0 {
                        best.offer(j, [state.workload(j) / r, 0.0], rng);
                    }
                }
                best.take()
            }
            Kind::Random { p, grouping } => {
                let m = sample_row(p.row(grouping.dispatcher_group_of[i]), rng);
                uniform_compatible(&grouping.server_groups[m], |j| inst.rate(i, j) > 0.0, rng)
                    .expect("validated: sampled group has a compatible server")
            }
            Kind::PBased { p, grouping } => {
                let m = sample_row(p.row(grouping.dispatcher_group_of[i]), rng);
                let compatible = |j: usize| inst.rate(i, j) > 0.0;
                uniform_compatible(state.idle_in_pool(m).as_slice(), compatible, rng)
                    .or_else(|| uniform_compatible(&grouping.server_groups[m], compatible, rng))
                    .expect("validated: sampled group has a compatible server")
            }
            Kind::Icrd(plan) => {
                let h = plan.class_of_dispatcher(i);
                state.idle_in_pool(h).sample(rng).unwrap_or_else(|| {
                    let pool = plan.class_pool(h);
                    pool[rng.gen_range(0..pool.len())]
                })
            }
        }
    }

    fn uniform_compatible_all<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Option<usize> {
        let n = self.instance.servers();
        for _ in 0..REJECTION_TRIES {
            let j = rng.gen_range(0..n);
            if self.instance.rate(i, j) > 0.0 {
                return Some(j);
            }
        }
        let all: Vec<usize> = (0..n).filter(|&j| self.instance.rate(i, j) > 0.0).collect();
        (!all.is_empty()).then(|| all[rng.gen_range(0..all.len())])
    }
}

/// Each dispatcher with traffic must find a compatible server in every group its class
/// may sample.
fn validate_group_routing(
    instance: &SystemInstance,
    p: &RoutingMatrix,
    grouping: &Grouping,
) -> Result<()> {
    if p.rows() != grouping.dispatcher_groups.len() || p.cols() != grouping.server_groups.len() {
        return Err(Error::InvalidArgument(format!(
            "routing matrix is {}x{} but the partition has {}x{} cells",
            p.rows(),
            p.cols(),
            grouping.dispatcher_groups.len(),
            grouping.server_groups.len()
        )));
    }
    for (h, dispatchers) in grouping.dispatcher_groups.iter().enumerate() {
        for m in 0..p.cols() {
            if p.get(h, m) <= 0.0 || dispatchers.is_empty() {
                continue;
            }
            let group = &grouping.server_groups[m];
            if group.is_empty() {
                return Err(Error::EmptyGroup { m });
            }
            for &i in dispatchers {
                if instance.arrival_rate(i) > 0.0 && group.iter().all(|&j| instance.rate(i, j) <= 0.0)
                {
                    return Err(Error::IncompatibleRouting { h, m });
                }
            }
        }
    }
    Ok(())
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (m, &q) in row.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = m;
            if u < acc {
                return m;
            }
        }
    }
    last
}

/// Uniform member of `set` satisfying `ok`: rejection sampling first, then a scan.
fn uniform_compatible<R: Rng + ?Sized>(
    set: &[usize],
    ok: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Option<usize> {
    if set.is_empty() {
        return None;
    }
    for _ in 0..REJECTION_TRIES {
        let j = set[rng.gen_range(0..set.len())];
        if ok(j) {
            return Some(j);
        }
    }
    let mut chosen = None;
    let mut seen = 0u32;
    for &j in set {
        if ok(j) {
            seen += 1;
            if rng.gen_range(0..seen) == 0 {
                chosen = Some(j);
            }
        }
    }
    chosen
}

/// Lexicographic argmin with uniform tie-breaking by reservoir sampling.
#[derive(Default)]
struct ArgBest {
    best: Option<(usize, [f64; 2])>,
    ties: u32,
}

impl ArgBest {
    fn offer<R: Rng + ?Sized>(&mut self, j: usize, key: [f64; 2], rng: &mut R) {
        let order = match &self.best {
            None => Ordering::Less,
            Some((_, k)) => key
                .partial_cmp(k)
                .expect("routing keys are finite"),
        };
        match order {
            Ordering::Less => {
                self.best = Some((j, key));
                self.ties = 1;
            }
            Ordering::Equal => {
                self.ties += 1;
                if rng.gen_range(0..self.ties) == 0 {
                    self.best = Some((j, key));
                }
            }
            Ordering::Greater => {}
        }
    }

    fn is_empty(&self) -> bool {
        self.best.is_none()
    }

    fn take(self) -> usize {
        self.best.expect("validated: dispatcher has a compatible server").0
    }
}

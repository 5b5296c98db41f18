use crate::criticality::{check_poly_membership, EpsilonAllocation, PartitionPlan, Verdict};
use crate::model::{group_indices, Grouping, SystemInstance};
use crate::{Error, Result};

/// Absorbs representation error in `N * (lambda p / mu + eps)` before flooring.
const FLOOR_GUARD: f64 = 1e-9;

/// Server blocks reserved per (task class, server type), built from a subcritical plan.
///
/// Within every server group the first `block_sizes[0][m]` servers (ascending index)
/// serve class 0, the next `block_sizes[1][m]` class 1, and so on; the rest of the group
/// is left unreserved and never receives work.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservationPlan {
    w_breaks: Vec<f64>,
    v_breaks: Vec<f64>,
    grouping: Grouping,
    block_of_server: Vec<Option<(usize, usize)>>,
    block_sizes: Vec<Vec<usize>>,
    eps: EpsilonAllocation,
    mu: Vec<Vec<f64>>,
    class_pools: Vec<Vec<usize>>,
}

impl ReservationPlan {
    pub fn w_breaks(&self) -> &[f64] {
        &self.w_breaks
    }

    pub fn v_breaks(&self) -> &[f64] {
        &self.v_breaks
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    pub fn classes(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn server_types(&self) -> usize {
        self.v_breaks.len() - 1
    }

    /// `(h, m)` for reserved servers, `None` for unreserved ones.
    pub fn block_of_server(&self, j: usize) -> Option<(usize, usize)> {
        self.block_of_server[j]
    }

    pub fn block_sizes(&self) -> &[Vec<usize>] {
        &self.block_sizes
    }

    pub fn unreserved_counts(&self) -> Vec<usize> {
        (0..self.server_types())
            .map(|m| {
                self.grouping.server_groups[m].len()
                    - self.block_sizes.iter().map(|row| row[m]).sum::<usize>()
            })
            .collect()
    }

    pub fn eps(&self) -> &EpsilonAllocation {
        &self.eps
    }

    /// Block rates of the plan (cell minima for envelope-based plans).
    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn class_of_dispatcher(&self, i: usize) -> usize {
        self.grouping.dispatcher_group_of[i]
    }

    /// Reserved servers of class `h`, ascending.
    pub fn class_pool(&self, h: usize) -> &[usize] {
        &self.class_pools[h]
    }

    /// Rate of `(i, j)` after pruning: the instance's own rate on reserved edges of the
    /// dispatcher's class, zero elsewhere.
    #[inline]
    pub fn pruned_rate(&self, instance: &SystemInstance, i: usize, j: usize) -> f64 {
        match self.block_of_server[j] {
            Some((h, _)) if h == self.grouping.dispatcher_group_of[i] => instance.rate(i, j),
            _ => 0.0,
        }
    }
}

/// Reserves `floor(N (lambda_h p[h][m] / mu[h][m] + eps[h][m]))` servers of group `m` for
/// class `h`. Fails with [`Error::ReservationOverflow`] when a group is too small, which
/// can happen at finite `N`; shrinking `eps` is the usual remedy
/// (see [`icrd_reserve_shrinking`]).
pub fn icrd_reserve(
    instance: &SystemInstance,
    plan: &PartitionPlan,
    eps: &EpsilonAllocation,
) -> Result<ReservationPlan> {
    if plan.verdict != Verdict::Subcritical {
        return Err(Error::InvalidArgument(format!(
            "reservation needs a subcritical plan, got {}",
            plan.verdict.as_str()
        )));
    }
    let widths = plan.v_widths();
    if !check_poly_membership(eps, &plan.p, &plan.lambda_h, &plan.mu, &widths) {
        return Err(Error::InvalidArgument(
            "eps is not in Poly(p) for this plan".into(),
        ));
    }
    let grouping = group_indices(instance, &plan.w_breaks, &plan.v_breaks)?;
    let (h_count, m_count) = (plan.classes(), plan.server_types());
    let n = instance.servers() as f64;

    let mut block_sizes = vec![vec![0usize; m_count]; h_count];
    for (h, row) in block_sizes.iter_mut().enumerate() {
        for (m, size) in row.iter_mut().enumerate() {
            let share = plan.p.get(h, m);
            if share > 0.0 {
                let target = n * (plan.lambda_h[h] * share / plan.mu[h][m] + eps.get(h, m));
                *size = (target + FLOOR_GUARD).floor() as usize;
            }
        }
    }
    for m in 0..m_count {
        let required: usize = block_sizes.iter().map(|row| row[m]).sum();
        let available = grouping.server_groups[m].len();
        if required > available {
            return Err(Error::ReservationOverflow {
                m,
                required,
                available,
            });
        }
    }

    let mut block_of_server = vec![None; instance.servers()];
    let mut class_pools = vec![Vec::new(); h_count];
    for m in 0..m_count {
        let mut members = grouping.server_groups[m].iter();
        for (h, pool) in class_pools.iter_mut().enumerate() {
            for &j in members.by_ref().take(block_sizes[h][m]) {
                block_of_server[j] = Some((h, m));
                pool.push(j);
            }
        }
    }
    class_pools.iter_mut().for_each(|pool| pool.sort_unstable());

    let reservation = ReservationPlan {
        w_breaks: plan.w_breaks.clone(),
        v_breaks: plan.v_breaks.clone(),
        grouping,
        block_of_server,
        block_sizes,
        eps: eps.clone(),
        mu: plan.mu.clone(),
        class_pools,
    };
    validate_pruned(instance, &reservation)?;
    Ok(reservation)
}

/// Every dispatcher that ever sends work needs a non-empty pool with positive rates.
fn validate_pruned(instance: &SystemInstance, plan: &ReservationPlan) -> Result<()> {
    for (h, dispatchers) in plan.grouping.dispatcher_groups.iter().enumerate() {
        for &i in dispatchers {
            if instance.arrival_rate(i) <= 0.0 {
                continue;
            }
            let pool = &plan.class_pools[h];
            if pool.is_empty() {
                return Err(Error::NoCompatibleServer { dispatcher: i });
            }
            if let Some(&j) = pool.iter().find(|&&j| instance.rate(i, j) <= 0.0) {
                let (_, m) = plan.block_of_server[j].expect("pool servers are reserved");
                return Err(Error::IncompatibleRouting { h, m });
            }
        }
    }
    Ok(())
}

/// [`icrd_reserve`], halving `eps` after each overflow, at most `attempts` times.
/// Returns the plan and the number of halvings applied.
pub fn icrd_reserve_shrinking(
    instance: &SystemInstance,
    plan: &PartitionPlan,
    eps: &EpsilonAllocation,
    attempts: usize,
) -> Result<(ReservationPlan, usize)> {
    let mut current = eps.clone();
    let mut shrinks = 0;
    loop {
        match icrd_reserve(instance, plan, &current) {
            Err(Error::ReservationOverflow { .. }) if shrinks < attempts => {
                current = current.scaled(0.5);
                shrinks += 1;
            }
            other => return other.map(|r| (r, shrinks)),
        }
    }
}

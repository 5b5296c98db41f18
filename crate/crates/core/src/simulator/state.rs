use std::collections::VecDeque;

use super::IndexedSet;
use crate::policies::StateView;

/// Per-server FCFS queues of task types plus the idle sets the router asked for.
#[derive(Debug, Clone)]
pub struct SimState {
    queues: Vec<VecDeque<u32>>,
    workload: Vec<f64>,
    pools: Vec<IndexedSet>,
    pool_of: Vec<Option<usize>>,
    in_system: u64,
}

impl SimState {
    /// Empty state. Pools must be disjoint; servers outside every pool are not tracked.
    pub fn new(servers: usize, pools: &[Vec<usize>]) -> Self {
        let mut pool_of = vec![None; servers];
        let pools = pools
            .iter()
            .enumerate()
            .map(|(k, pool)| {
                let mut set = IndexedSet::with_capacity(servers);
                for &j in pool {
                    debug_assert!(pool_of[j].is_none(), "pools overlap at server {j}");
                    pool_of[j] = Some(k);
                    set.insert(j);
                }
                set
            })
            .collect();
        Self {
            queues: vec![VecDeque::new(); servers],
            workload: vec![0.0; servers],
            pools,
            pool_of,
            in_system: 0,
        }
    }

    pub fn servers(&self) -> usize {
        self.queues.len()
    }

    pub fn in_system(&self) -> u64 {
        self.in_system
    }

    pub fn queue(&self, j: usize) -> &VecDeque<u32> {
        &self.queues[j]
    }

    pub fn head(&self, j: usize) -> Option<usize> {
        self.queues[j].front().map(|&i| i as usize)
    }

    /// Appends a task of type `i` served at `rate`; returns the queue length before.
    pub fn push(&mut self, j: usize, i: usize, rate: f64) -> usize {
        let before = self.queues[j].len();
        self.queues[j].push_back(i as u32);
        self.workload[j] += 1.0 / rate;
        if before == 0 {
            if let Some(k) = self.pool_of[j] {
                self.pools[k].remove(j);
            }
        }
        self.in_system += 1;
        before
    }

    /// Removes the head task, whose rate at `j` is `rate`; returns its type.
    pub fn pop(&mut self, j: usize, rate: f64) -> usize {
        let i = self.queues[j].pop_front().expect("departure from an empty queue") as usize;
        if self.queues[j].is_empty() {
            // Resetting avoids accumulating rounding error across busy periods.
            self.workload[j] = 0.0;
            if let Some(k) = self.pool_of[j] {
                self.pools[k].insert(j);
            }
        } else {
            self.workload[j] -= 1.0 / rate;
        }
        self.in_system -= 1;
        i
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    /// Checks idle-set coherence and recomputes every weighted queue length.
    pub fn audit(&self, rate: impl Fn(usize, usize) -> f64) -> Result<(), String> {
        let total: usize = self.queues.iter().map(VecDeque::len).sum();
        if total as u64 != self.in_system {
            return Err(format!("in-system count {} but queues hold {total}", self.in_system));
        }
        for (j, q) in self.queues.iter().enumerate() {
            if let Some(k) = self.pool_of[j] {
                if self.pools[k].contains(j) != q.is_empty() {
                    return Err(format!("idle set of pool {k} disagrees at server {j}"));
                }
            }
            let exact: f64 = q.iter().map(|&i| 1.0 / rate(i as usize, j)).sum();
            if (exact - self.workload[j]).abs() > 1e-9 * exact.max(1.0) {
                return Err(format!(
                    "workload drift at server {j}: incremental {} vs exact {exact}",
                    self.workload[j]
                ));
            }
        }
        for (k, set) in self.pools.iter().enumerate() {
            if let Some(&j) = set.as_slice().iter().find(|&&j| self.pool_of[j] != Some(k)) {
                return Err(format!("server {j} listed idle in foreign pool {k}"));
            }
        }
        Ok(())
    }
}

impl StateView for SimState {
    #[inline]
    fn queue_len(&self, j: usize) -> usize {
        self.queues[j].len()
    }

    #[inline]
    fn workload(&self, j: usize) -> f64 {
        self.workload[j]
    }

    #[inline]
    fn idle_in_pool(&self, pool: usize) -> &IndexedSet {
        &self.pools[pool]
    }
}

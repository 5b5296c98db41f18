use std::io::{self, Write};

use crate::model::{group_indices, SystemInstance};
use crate::policies::ReservationPlan;
use crate::{Error, Result};

pub const DEFAULT_L_CAP: usize = 10;

/// How servers and tasks map onto the aggregates recorded in a [`Trace`].
///
/// Tail counts are kept per block `(slot, m)`: slot 0 holds servers outside any
/// reservation (every server when no reservation is given), slot `h + 1` the block
/// reserved for class `h`. Busy servers are also counted per server type and per rate
/// class, where the rate class of a busy server is the cell rate of (class of its head
/// task, its type) looked up in `rate_values`; cells whose rate is not listed fall in a
/// trailing "other" class.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLayout {
    dims: TraceDims,
    dispatcher_class: Vec<usize>,
    server_type: Vec<usize>,
    server_slot: Vec<usize>,
    block_sizes: Vec<usize>,
    cell_class: Vec<usize>,
}

/// Shape of the recorded aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDims {
    pub classes: usize,
    pub server_types: usize,
    pub l_cap: usize,
    pub rate_values: Vec<f64>,
}

impl TraceDims {
    pub fn slots(&self) -> usize {
        self.classes + 1
    }

    /// Levels `0..=l_cap` plus one overflow level counting queues longer than `l_cap`.
    pub fn levels(&self) -> usize {
        self.l_cap + 2
    }

    pub fn rate_classes(&self) -> usize {
        self.rate_values.len() + 1
    }

    pub fn tail_len(&self) -> usize {
        self.slots() * self.server_types * self.levels()
    }

    pub fn busy_len(&self) -> usize {
        self.server_types * self.rate_classes()
    }

    #[inline]
    pub fn tail_index(&self, slot: usize, m: usize, l: usize) -> usize {
        (slot * self.server_types + m) * self.levels() + l
    }

    #[inline]
    pub fn busy_index(&self, m: usize, k: usize) -> usize {
        m * self.rate_classes() + k
    }
}

impl TraceLayout {
    pub fn new(
        instance: &SystemInstance,
        w_breaks: &[f64],
        v_breaks: &[f64],
        cell_rates: &[Vec<f64>],
        rate_values: Vec<f64>,
        reservation: Option<&ReservationPlan>,
    ) -> Result<Self> {
        let grouping = group_indices(instance, w_breaks, v_breaks)?;
        let (h_count, m_count) = (w_breaks.len() - 1, v_breaks.len() - 1);
        if cell_rates.len() != h_count || cell_rates.iter().any(|r| r.len() != m_count) {
            return Err(Error::InvalidArgument("cell rate table does not match the partition".into()));
        }
        if let Some(plan) = reservation {
            if plan.classes() != h_count || plan.server_types() != m_count {
                return Err(Error::InvalidArgument(
                    "reservation partition differs from the trace partition".into(),
                ));
            }
        }
        let dims = TraceDims {
            classes: h_count,
            server_types: m_count,
            l_cap: DEFAULT_L_CAP,
            rate_values,
        };
        let other = dims.rate_values.len();
        let cell_class = cell_rates
            .iter()
            .flatten()
            .map(|r| dims.rate_values.iter().position(|v| v == r).unwrap_or(other))
            .collect();
        let server_slot: Vec<usize> = (0..instance.servers())
            .map(|j| match reservation.and_then(|plan| plan.block_of_server(j)) {
                Some((h, _)) => h + 1,
                None => 0,
            })
            .collect();
        let mut block_sizes = vec![0; dims.slots() * m_count];
        for (j, &slot) in server_slot.iter().enumerate() {
            block_sizes[slot * m_count + grouping.server_group_of[j]] += 1;
        }
        Ok(Self {
            dims,
            dispatcher_class: grouping.dispatcher_group_of,
            server_type: grouping.server_group_of,
            server_slot,
            block_sizes,
            cell_class,
        })
    }

    /// One class, one server type and no named rate classes.
    pub fn trivial(instance: &SystemInstance) -> Self {
        Self::new(instance, &[0.0, 1.0], &[0.0, 1.0], &[vec![0.0]], Vec::new(), None)
            .expect("trivial partition is valid")
    }

    pub fn with_l_cap(mut self, l_cap: usize) -> Self {
        self.dims.l_cap = l_cap;
        self
    }

    pub fn dims(&self) -> &TraceDims {
        &self.dims
    }

    pub fn servers(&self) -> usize {
        self.server_slot.len()
    }

    pub fn block_size(&self, slot: usize, m: usize) -> usize {
        self.block_sizes[slot * self.dims.server_types + m]
    }

    #[inline]
    pub(crate) fn block_of(&self, j: usize) -> (usize, usize) {
        (self.server_slot[j], self.server_type[j])
    }

    #[inline]
    pub(crate) fn rate_class(&self, i: usize, j: usize) -> usize {
        self.cell_class[self.dispatcher_class[i] * self.dims.server_types + self.server_type[j]]
    }
}

/// Aggregates at one sample time, all divided by `N`, plus cumulative time integrals
/// (also divided by `N`) and event counters since time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub tail: Vec<f64>,
    pub busy: Vec<f64>,
    /// Mean queue length per server.
    pub queue: f64,
    pub tail_integral: Vec<f64>,
    pub busy_integral: Vec<f64>,
    pub queue_integral: f64,
    pub arrivals: u64,
    pub departures: u64,
    /// Arrivals sent to a server that already had a task.
    pub busy_assignments: u64,
    /// Arrivals sent to a server whose rate for them is below the bad-rate threshold.
    pub bad_assignments: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dims: TraceDims,
    pub servers: usize,
    pub horizon: f64,
    pub seed: u64,
    pub bad_rate_threshold: f64,
    /// Tasks placed by the initial state (not counted as arrivals).
    pub preloaded: u64,
    pub samples: Vec<Sample>,
    /// Task types queued at every server at the horizon, head first.
    pub final_queues: Vec<Vec<u32>>,
}

impl Trace {
    pub fn tail(&self, s: usize, slot: usize, m: usize, l: usize) -> f64 {
        self.samples[s].tail[self.dims.tail_index(slot, m, l)]
    }

    pub fn busy(&self, s: usize, m: usize, k: usize) -> f64 {
        self.samples[s].busy[self.dims.busy_index(m, k)]
    }

    /// Fraction of all servers that are busy with a task of reserved class `h`.
    pub fn class_busy(&self, s: usize, h: usize) -> f64 {
        (0..self.dims.server_types)
            .map(|m| self.tail(s, h + 1, m, 1))
            .sum()
    }

    /// Busy servers of type `m` over `N`, any rate class.
    pub fn group_busy(&self, s: usize, m: usize) -> f64 {
        (0..self.dims.rate_classes()).map(|k| self.busy(s, m, k)).sum()
    }

    pub fn total_busy(&self, s: usize) -> f64 {
        (0..self.dims.server_types).map(|m| self.group_busy(s, m)).sum()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    /// Pointwise mean of replications sharing a sample grid. Counters become rounded means.
    pub fn mean(traces: &[Trace]) -> Result<Trace> {
        let first = traces
            .first()
            .ok_or_else(|| Error::InvalidArgument("no traces to merge".into()))?;
        if traces.iter().any(|t| {
            t.dims != first.dims
                || t.samples.len() != first.samples.len()
                || t.samples.iter().zip(&first.samples).any(|(a, b)| a.time != b.time)
        }) {
            return Err(Error::InvalidArgument("traces have different layouts or grids".into()));
        }
        let r = traces.len() as f64;
        let avg_vec = |pick: &dyn Fn(&Sample) -> &Vec<f64>, s: usize| -> Vec<f64> {
            let mut out = vec![0.0; pick(&first.samples[s]).len()];
            for t in traces {
                for (o, v) in out.iter_mut().zip(pick(&t.samples[s])) {
                    *o += v / r;
                }
            }
            out
        };
        let avg_count = |pick: &dyn Fn(&Sample) -> u64, s: usize| -> u64 {
            (traces.iter().map(|t| pick(&t.samples[s]) as f64).sum::<f64>() / r).round() as u64
        };
        let samples = (0..first.samples.len())
            .map(|s| Sample {
                time: first.samples[s].time,
                tail: avg_vec(&|x| &x.tail, s),
                busy: avg_vec(&|x| &x.busy, s),
                queue: traces.iter().map(|t| t.samples[s].queue).sum::<f64>() / r,
                tail_integral: avg_vec(&|x| &x.tail_integral, s),
                busy_integral: avg_vec(&|x| &x.busy_integral, s),
                queue_integral: traces.iter().map(|t| t.samples[s].queue_integral).sum::<f64>() / r,
                arrivals: avg_count(&|x| x.arrivals, s),
                departures: avg_count(&|x| x.departures, s),
                busy_assignments: avg_count(&|x| x.busy_assignments, s),
                bad_assignments: avg_count(&|x| x.bad_assignments, s),
            })
            .collect();
        Ok(Trace {
            dims: first.dims.clone(),
            servers: first.servers,
            horizon: first.horizon,
            seed: first.seed,
            bad_rate_threshold: first.bad_rate_threshold,
            preloaded: first.preloaded,
            samples,
            final_queues: first.final_queues.clone(),
        })
    }

    /// Rows `time,h,m,l,value` of the tail fractions. `h = 0` is the unreserved slot,
    /// `h >= 1` the block reserved for class `h`; `m` is 1-based; `l = l_cap + 1` is the
    /// overflow level. Blocks that never hold a server are skipped.
    pub fn write_tail_csv<W: Write>(&self, mut out: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(out, "time,h,m,l,value")?;
        }
        let d = &self.dims;
        let live: Vec<(usize, usize)> = (0..d.slots())
            .flat_map(|slot| (0..d.server_types).map(move |m| (slot, m)))
            .filter(|&(slot, m)| self.samples.iter().any(|s| s.tail[d.tail_index(slot, m, 0)] > 0.0))
            .collect();
        for s in &self.samples {
            for &(slot, m) in &live {
                for l in 0..d.levels() {
                    writeln!(out, "{},{},{},{},{}", s.time, slot, m + 1, l, s.tail[d.tail_index(slot, m, l)])?;
                }
            }
        }
        Ok(())
    }

    /// Rows `time,m,k,value` of busy fractions by server type and rate class (both
    /// 1-based; `k = K + 1` collects unlisted rates).
    pub fn write_busy_csv<W: Write>(&self, mut out: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(out, "time,m,k,value")?;
        }
        let d = &self.dims;
        for s in &self.samples {
            for m in 0..d.server_types {
                for k in 0..d.rate_classes() {
                    writeln!(out, "{},{},{},{}", s.time, m + 1, k + 1, s.busy[d.busy_index(m, k)])?;
                }
            }
        }
        Ok(())
    }

    /// Rows `time,value` of the mean queue length per server.
    pub fn write_queue_csv<W: Write>(&self, mut out: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(out, "time,value")?;
        }
        for s in &self.samples {
            writeln!(out, "{},{}", s.time, s.queue)?;
        }
        Ok(())
    }
}

/// `0, step, 2 step, ...` up to and including `horizon`.
pub fn uniform_grid(horizon: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && horizon >= 0.0);
    let count = (horizon / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|k| k as f64 * step).collect();
    if horizon - grid[count] > 1e-9 * step {
        grid.push(horizon);
    } else {
        grid[count] = horizon;
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ends_at_horizon() {
        assert_eq!(uniform_grid(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(uniform_grid(1.0, 0.3).last(), Some(&1.0));
        assert_eq!(uniform_grid(1.0, 0.3).len(), 5);
    }

    #[test]
    fn layout_blocks_and_rate_classes() {
        let inst = SystemInstance::from_matrix(vec![1.0; 4], vec![vec![1.0; 4]; 4]).unwrap();
        let layout = TraceLayout::new(
            &inst,
            &[0.0, 0.5, 1.0],
            &[0.0, 0.5, 1.0],
            &[vec![2.0, 0.3], vec![0.3, 2.0]],
            vec![2.0],
            None,
        )
        .unwrap();
        assert_eq!(layout.block_size(0, 0), 2);
        assert_eq!(layout.block_size(1, 0), 0);
        assert_eq!(layout.rate_class(0, 0), 0);
        assert_eq!(layout.rate_class(0, 3), 1);
        assert_eq!(layout.rate_class(3, 3), 0);
        assert_eq!(layout.dims().levels(), DEFAULT_L_CAP + 2);
    }
}

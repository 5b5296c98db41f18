use super::trace::{Trace, TraceDims};
use crate::{Error, Result};

/// Time averages over `[start, end]` and event ratios over the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSummary {
    pub start: f64,
    pub end: f64,
    pub dims: TraceDims,
    pub tail: Vec<f64>,
    pub busy: Vec<f64>,
    pub queue: f64,
    pub arrivals: u64,
    pub busy_assignments: u64,
    pub bad_assignments: u64,
    /// Busy assignments over arrivals in the window (0 without arrivals).
    pub queueing_probability: f64,
    /// Bad assignments over arrivals in the window (0 without arrivals).
    pub bad_probability: f64,
}

impl SteadyStateSummary {
    pub fn tail(&self, slot: usize, m: usize, l: usize) -> f64 {
        self.tail[self.dims.tail_index(slot, m, l)]
    }

    pub fn busy(&self, m: usize, k: usize) -> f64 {
        self.busy[self.dims.busy_index(m, k)]
    }

    pub fn class_busy(&self, h: usize) -> f64 {
        (0..self.dims.server_types).map(|m| self.tail(h + 1, m, 1)).sum()
    }

    pub fn total_busy(&self) -> f64 {
        self.busy.iter().sum()
    }
}

/// Averages a trace over `[warmup_fraction * T, T]`. The window starts at the first
/// sample at or after the warm-up time and ends at the last sample.
pub fn steady_state_estimate(trace: &Trace, warmup_fraction: f64) -> Result<SteadyStateSummary> {
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::InvalidArgument(format!(
            "warm-up fraction must be in [0, 1), got {warmup_fraction}"
        )));
    }
    let cut = warmup_fraction * trace.horizon;
    let first = trace
        .samples
        .iter()
        .position(|s| s.time >= cut - 1e-12 * trace.horizon)
        .ok_or_else(|| Error::InvalidArgument("no sample after the warm-up time".into()))?;
    let (a, b) = (&trace.samples[first], trace.samples.last().expect("non-empty"));
    let span = b.time - a.time;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "empty post-warm-up window [{}, {}]",
            a.time, b.time
        )));
    }
    let average = |end: &[f64], start: &[f64]| -> Vec<f64> {
        end.iter().zip(start).map(|(e, s)| (e - s) / span).collect()
    };
    let arrivals = b.arrivals - a.arrivals;
    let busy_assignments = b.busy_assignments - a.busy_assignments;
    let bad_assignments = b.bad_assignments - a.bad_assignments;
    let ratio = |x: u64| if arrivals == 0 { 0.0 } else { x as f64 / arrivals as f64 };
    Ok(SteadyStateSummary {
        start: a.time,
        end: b.time,
        dims: trace.dims.clone(),
        tail: average(&b.tail_integral, &a.tail_integral),
        busy: average(&b.busy_integral, &a.busy_integral),
        queue: (b.queue_integral - a.queue_integral) / span,
        arrivals,
        busy_assignments,
        bad_assignments,
        queueing_probability: ratio(busy_assignments),
        bad_probability: ratio(bad_assignments),
    })
}

/// Sample mean and its standard error (0 for a single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemInstance;
    use crate::policies::PolicySpec;
    use crate::simulator::{simulate, uniform_grid, InitialState, SimOptions, SimParams, TraceLayout};

    #[test]
    fn constant_trace_averages_to_constant() {
        // Empty system without arrivals: every aggregate is constant.
        let inst = SystemInstance::from_matrix(vec![0.0], vec![vec![1.0; 4]]).unwrap();
        let trace = simulate(
            &inst,
            &PolicySpec::Jiq,
            &TraceLayout::trivial(&inst),
            &SimParams {
                horizon: 10.0,
                seed: 1,
                init: InitialState::Empty,
                sample_times: uniform_grid(10.0, 1.0),
                options: SimOptions::default(),
            },
        )
        .unwrap();
        let s = steady_state_estimate(&trace, 0.5).unwrap();
        assert_eq!(s.tail(0, 0, 0), 1.0);
        assert_eq!(s.tail(0, 0, 1), 0.0);
        assert_eq!(s.queue, 0.0);
        assert_eq!((s.start, s.end), (5.0, 10.0));
        assert_eq!(s.queueing_probability, 0.0);
    }

    #[test]
    fn rejects_bad_warmup_and_empty_window() {
        let inst = SystemInstance::from_matrix(vec![0.0], vec![vec![1.0]]).unwrap();
        let trace = simulate(
            &inst,
            &PolicySpec::Jiq,
            &TraceLayout::trivial(&inst),
            &SimParams {
                horizon: 1.0,
                seed: 1,
                init: InitialState::Empty,
                sample_times: vec![0.0, 0.2],
                options: SimOptions::default(),
            },
        )
        .unwrap();
        assert!(steady_state_estimate(&trace, 1.0).is_err());
        assert!(steady_state_estimate(&trace, 0.5).is_err());
    }

    #[test]
    fn stderr_of_known_values() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}

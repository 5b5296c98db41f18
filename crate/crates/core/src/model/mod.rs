//! Rate surfaces, arrival intensities, membership maps and concrete system instances.
//!
//! Intervals are half-open everywhere: a coordinate `x` belongs to cell `k` when
//! `breaks[k] <= x < breaks[k + 1]`.

mod arrival;
mod instance;
mod membership;
mod rate;

pub use arrival::{integrate_lambda, ArrivalRateFunction};
pub use instance::{build_instance, build_instance_with_cap, SystemInstance, DEFAULT_DENSE_CAP};
pub use membership::MembershipMap;
pub use rate::{
    bump_surface, cell_extrema, lower_envelope, Bump, CellExtrema, EnvelopeOptions, Evaluator,
    GeneralRateFunction, RateFunction, StepwiseRateFunction,
};

use crate::error::{Error, Result};

/// Checks `0 = b_0 < b_1 < ... < b_K = 1` with `K >= 1`.
pub fn validate_breaks(breaks: &[f64]) -> Result<()> {
    if breaks.len() < 2 {
        return Err(Error::InvalidPartition("need at least two breakpoints".into()));
    }
    if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
        return Err(Error::InvalidPartition(format!(
            "breakpoints must start at 0 and end at 1, got {breaks:?}"
        )));
    }
    if breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidPartition(format!(
            "breakpoints must be strictly increasing, got {breaks:?}"
        )));
    }
    Ok(())
}

/// Index of the half-open cell containing `x`; values at or past 1 land in the last cell.
#[inline]
pub fn interval_index(breaks: &[f64], x: f64) -> usize {
    let cells = breaks.len() - 1;
    breaks[1..].partition_point(|&b| b <= x).min(cells - 1)
}

/// Dispatchers and servers classified by a pair of partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub dispatcher_groups: Vec<Vec<usize>>,
    pub server_groups: Vec<Vec<usize>>,
    pub dispatcher_group_of: Vec<usize>,
    pub server_group_of: Vec<usize>,
}

impl Grouping {
    pub fn empty_dispatcher_groups(&self) -> Vec<usize> {
        empty_indices(&self.dispatcher_groups)
    }

    pub fn empty_server_groups(&self) -> Vec<usize> {
        empty_indices(&self.server_groups)
    }

    pub fn server_group_sizes(&self) -> Vec<usize> {
        self.server_groups.iter().map(Vec::len).collect()
    }
}

fn empty_indices(groups: &[Vec<usize>]) -> Vec<usize> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_empty())
        .map(|(k, _)| k)
        .collect()
}

pub fn group_indices(
    instance: &SystemInstance,
    w_breaks: &[f64],
    v_breaks: &[f64],
) -> Result<Grouping> {
    validate_breaks(w_breaks)?;
    validate_breaks(v_breaks)?;
    let classify = |coords: &[f64], breaks: &[f64]| {
        let mut groups = vec![Vec::new(); breaks.len() - 1];
        let group_of: Vec<usize> = coords
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let g = interval_index(breaks, x);
                groups[g].push(idx);
                g
            })
            .collect();
        (groups, group_of)
    };
    let (dispatcher_groups, dispatcher_group_of) =
        classify(instance.dispatcher_coords(), w_breaks);
    let (server_groups, server_group_of) = classify(instance.server_coords(), v_breaks);
    Ok(Grouping {
        dispatcher_groups,
        server_groups,
        dispatcher_group_of,
        server_group_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_instance(n: usize, phi2: MembershipMap) -> SystemInstance {
        build_instance(
            n,
            n,
            &StepwiseRateFunction::constant(1.0).unwrap().into(),
            &ArrivalRateFunction::constant(1.0).unwrap(),
            &MembershipMap::Equispaced,
            &phi2,
        )
        .unwrap()
    }

    #[test]
    fn equispaced_halves() {
        let inst = unit_instance(4, MembershipMap::Equispaced);
        let g = group_indices(&inst, &[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(g.server_groups, vec![vec![0, 1], vec![2, 3]]);
        assert!(g.empty_server_groups().is_empty());
    }

    #[test]
    fn boundary_goes_to_upper_group() {
        let inst = unit_instance(2, MembershipMap::Explicit(vec![0.5, 0.1]));
        let g = group_indices(&inst, &[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(g.server_group_of, vec![1, 0]);
    }

    #[test]
    fn five_blocks_on_uniform_maps() {
        let inst = unit_instance(5000, MembershipMap::SeededUniform { seed: 1 });
        let breaks = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let g = group_indices(&inst, &breaks, &breaks).unwrap();
        for size in g.server_group_sizes() {
            assert!((size as f64 - 1000.0).abs() < 100.0, "group size {size}");
        }
    }

    #[test]
    fn breaks_validation() {
        assert!(validate_breaks(&[0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(validate_breaks(&[0.1, 1.0]).is_err());
        assert!(validate_breaks(&[0.0]).is_err());
        assert!(validate_breaks(&[0.0, 0.3, 1.0]).is_ok());
        assert_eq!(interval_index(&[0.0, 0.3, 1.0], 0.3), 1);
        assert_eq!(interval_index(&[0.0, 0.3, 1.0], 0.0), 0);
    }
}

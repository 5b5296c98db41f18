use super::{ArrivalRateFunction, MembershipMap, RateFunction};
use crate::error::{Error, Result};

/// Largest `W * N` stored as a dense matrix; larger instances evaluate `f` on demand.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

#[derive(Debug, Clone)]
enum RateStore {
    Dense(Vec<f64>),
    Lazy(RateFunction),
}

/// One concrete system: `W` Poisson dispatchers, `N` servers and the rate matrix between them.
#[derive(Debug, Clone)]
pub struct SystemInstance {
    dispatcher_coords: Vec<f64>,
    server_coords: Vec<f64>,
    arrival_rates: Vec<f64>,
    rates: RateStore,
}

pub fn build_instance(
    n: usize,
    w: usize,
    f: &RateFunction,
    lam: &ArrivalRateFunction,
    phi1: &MembershipMap,
    phi2: &MembershipMap,
) -> Result<SystemInstance> {
    build_instance_with_cap(n, w, f, lam, phi1, phi2, DEFAULT_DENSE_CAP)
}

pub fn build_instance_with_cap(
    n: usize,
    w: usize,
    f: &RateFunction,
    lam: &ArrivalRateFunction,
    phi1: &MembershipMap,
    phi2: &MembershipMap,
    dense_cap: usize,
) -> Result<SystemInstance> {
    if n == 0 || w == 0 {
        return Err(Error::InvalidArgument("N and W must be positive".into()));
    }
    let dispatcher_coords = phi1.values(w)?;
    let server_coords = phi2.values(n)?;
    let arrival_rates: Vec<f64> = dispatcher_coords.iter().map(|&x| lam.eval(x)).collect();

    let dense = w.saturating_mul(n) <= dense_cap;
    let mut matrix = Vec::with_capacity(if dense { w * n } else { 0 });
    for (i, &x) in dispatcher_coords.iter().enumerate() {
        let mut compatible = false;
        for &y in &server_coords {
            let rate = f.eval(x, y);
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::InvalidRate(format!("f({x}, {y}) = {rate}")));
            }
            compatible |= rate > 0.0;
            if dense {
                matrix.push(rate);
            }
        }
        if !compatible {
            return Err(Error::NoCompatibleServer { dispatcher: i });
        }
    }
    let rates = if dense {
        RateStore::Dense(matrix)
    } else {
        RateStore::Lazy(f.clone())
    };
    Ok(SystemInstance {
        dispatcher_coords,
        server_coords,
        arrival_rates,
        rates,
    })
}

impl SystemInstance {
    /// Instance from an explicit `W x N` rate matrix; coordinates are equispaced.
    pub fn from_matrix(arrival_rates: Vec<f64>, rates: Vec<Vec<f64>>) -> Result<Self> {
        let w = arrival_rates.len();
        let n = rates.first().map_or(0, Vec::len);
        if w == 0 || n == 0 || rates.len() != w || rates.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("rate matrix must be W x N, non-empty".into()));
        }
        if arrival_rates.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument("arrival rates must be finite and >= 0".into()));
        }
        for (i, row) in rates.iter().enumerate() {
            if row.iter().any(|r| !r.is_finite() || *r < 0.0) {
                return Err(Error::InvalidRate(format!("row {i} has a negative or non-finite rate")));
            }
            if row.iter().all(|r| *r == 0.0) {
                return Err(Error::NoCompatibleServer { dispatcher: i });
            }
        }
        Ok(Self {
            dispatcher_coords: MembershipMap::Equispaced.values(w)?,
            server_coords: MembershipMap::Equispaced.values(n)?,
            arrival_rates,
            rates: RateStore::Dense(rates.into_iter().flatten().collect()),
        })
    }

    pub fn servers(&self) -> usize {
        self.server_coords.len()
    }

    pub fn dispatchers(&self) -> usize {
        self.dispatcher_coords.len()
    }

    /// `W / N`.
    pub fn xi(&self) -> f64 {
        self.dispatchers() as f64 / self.servers() as f64
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        match &self.rates {
            RateStore::Dense(m) => m[i * self.server_coords.len() + j],
            RateStore::Lazy(f) => f.eval(self.dispatcher_coords[i], self.server_coords[j]),
        }
    }

    pub fn arrival_rate(&self, i: usize) -> f64 {
        self.arrival_rates[i]
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    pub fn dispatcher_coords(&self) -> &[f64] {
        &self.dispatcher_coords
    }

    pub fn server_coords(&self) -> &[f64] {
        &self.server_coords
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.rates, RateStore::Dense(_))
    }

    /// Empirical class intensities `sum_{i in W_h} lambda_i / N`.
    pub fn class_arrival_rates(&self, dispatcher_groups: &[Vec<usize>]) -> Vec<f64> {
        let n = self.servers() as f64;
        dispatcher_groups
            .iter()
            .map(|g| g.iter().map(|&i| self.arrival_rates[i]).sum::<f64>() / n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StepwiseRateFunction;

    #[test]
    fn single_cell_instance() {
        let f = StepwiseRateFunction::constant(1.0).unwrap().into();
        let lam = ArrivalRateFunction::constant(0.5).unwrap();
        let inst = build_instance(
            1,
            1,
            &f,
            &lam,
            &MembershipMap::Equispaced,
            &MembershipMap::Equispaced,
        )
        .unwrap();
        assert_eq!(inst.rate(0, 0), 1.0);
        assert_eq!(inst.arrival_rate(0), 0.5);
        assert_eq!(inst.xi(), 1.0);
    }

    #[test]
    fn affine_arrivals_follow_coordinates() {
        let f = StepwiseRateFunction::constant(1.0).unwrap().into();
        let lam = ArrivalRateFunction::affine(5.0, 0.0).unwrap();
        let phi1 = MembershipMap::SeededUniform { seed: 3 };
        let phi2 = MembershipMap::SeededUniform { seed: 4 };
        let inst = build_instance(50, 50, &f, &lam, &phi1, &phi2).unwrap();
        for (i, &x) in inst.dispatcher_coords().iter().enumerate() {
            assert_eq!(inst.arrival_rate(i), 5.0 * x);
        }
        let again = build_instance(50, 50, &f, &lam, &phi1, &phi2).unwrap();
        assert_eq!(inst.server_coords(), again.server_coords());
        assert_eq!(inst.arrival_rates(), again.arrival_rates());
    }

    #[test]
    fn dense_matrix_matches_stepwise_cells() {
        let step = StepwiseRateFunction::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        )
        .unwrap();
        let f: RateFunction = step.into();
        let lam = ArrivalRateFunction::constant(1.0).unwrap();
        let inst = build_instance(
            2,
            2,
            &f,
            &lam,
            &MembershipMap::Equispaced,
            &MembershipMap::Equispaced,
        )
        .unwrap();
        assert!(inst.is_dense());
        assert_eq!(
            [inst.rate(0, 0), inst.rate(0, 1), inst.rate(1, 0), inst.rate(1, 1)],
            [1.0, 2.0, 3.0, 4.0]
        );
        let lazy = build_instance_with_cap(
            2,
            2,
            &f,
            &lam,
            &MembershipMap::Equispaced,
            &MembershipMap::Equispaced,
            1,
        )
        .unwrap();
        assert!(!lazy.is_dense());
        assert_eq!(lazy.rate(1, 0), 3.0);
    }

    #[test]
    fn rejects_dispatcher_without_servers() {
        let step = StepwiseRateFunction::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let lam = ArrivalRateFunction::constant(1.0).unwrap();
        // Every server sits in the first column band, where dispatcher band 0 has rate 1;
        // put all servers in the second band instead.
        let err = build_instance(
            2,
            2,
            &step.into(),
            &lam,
            &MembershipMap::Equispaced,
            &MembershipMap::Explicit(vec![0.6, 0.7]),
        )
        .unwrap_err();
        assert_eq!(err, Error::NoCompatibleServer { dispatcher: 0 });
    }
}

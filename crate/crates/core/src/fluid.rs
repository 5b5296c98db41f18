//! Fluid-limit curves and fixed points in closed form.

use std::io::{self, Write};

use crate::criticality::RoutingMatrix;
use crate::{Error, Result};

/// Arrival mass per rate class and the matching fixed points, per server type.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidParams {
    /// `lambda_p[m][k] = sum_h p[h][m] lambda_h [mu[h][m] == mu_k[k]]`.
    pub lambda_p: Vec<Vec<f64>>,
    /// Distinct positive rates of the cells that receive traffic, ascending.
    pub mu_k: Vec<f64>,
    /// `x_p[m][k] = lambda_p[m][k] / mu_k[k]`.
    pub x_p: Vec<Vec<f64>>,
}

impl FluidParams {
    pub fn server_types(&self) -> usize {
        self.lambda_p.len()
    }

    pub fn rate_classes(&self) -> usize {
        self.mu_k.len()
    }

    /// Fluid curves `x_{m,k}(t)` started at `x0[m][k]`, sampled at `times`.
    pub fn curves(&self, x0: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        if x0.len() != self.server_types() || x0.iter().any(|r| r.len() != self.rate_classes()) {
            return Err(Error::InvalidArgument("initial fluid state has the wrong shape".into()));
        }
        (0..self.server_types())
            .map(|m| {
                (0..self.rate_classes())
                    .map(|k| {
                        times
                            .iter()
                            .map(|&t| ode_transient(self.lambda_p[m][k], self.mu_k[k], x0[m][k], t))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Rows `time,m,k,value` (1-based `m`, `k`) of the curves from `x0`, matching the
    /// busy-server trace schema.
    pub fn write_curves_csv<W: Write>(
        &self,
        mut out: W,
        x0: &[Vec<f64>],
        times: &[f64],
        header: bool,
    ) -> io::Result<()> {
        let curves = self
            .curves(x0, times)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        if header {
            writeln!(out, "time,m,k,value")?;
        }
        for (s, t) in times.iter().enumerate() {
            for (m, row) in curves.iter().enumerate() {
                for (k, curve) in row.iter().enumerate() {
                    writeln!(out, "{},{},{},{}", t, m + 1, k + 1, curve[s])?;
                }
            }
        }
        Ok(())
    }
}

pub fn lambda_p_matrix(p: &RoutingMatrix, lambda_h: &[f64], mu: &[Vec<f64>]) -> Result<FluidParams> {
    let (h_count, m_count) = (p.rows(), p.cols());
    if lambda_h.len() != h_count || mu.len() != h_count || mu.iter().any(|r| r.len() != m_count) {
        return Err(Error::InvalidArgument("lambda, mu and p shapes disagree".into()));
    }
    let mut mu_k: Vec<f64> = Vec::new();
    for h in 0..h_count {
        for m in 0..m_count {
            if p.get(h, m) > 0.0 {
                if !(mu[h][m] > 0.0) {
                    return Err(Error::IncompatibleRouting { h, m });
                }
                mu_k.push(mu[h][m]);
            }
        }
    }
    mu_k.sort_by(f64::total_cmp);
    mu_k.dedup();
    let mut lambda_p = vec![vec![0.0; mu_k.len()]; m_count];
    for h in 0..h_count {
        for m in 0..m_count {
            let share = p.get(h, m);
            if share > 0.0 {
                let k = mu_k.iter().position(|&v| v == mu[h][m]).expect("collected above");
                lambda_p[m][k] += share * lambda_h[h];
            }
        }
    }
    let x_p = lambda_p
        .iter()
        .map(|row| row.iter().zip(&mu_k).map(|(l, u)| l / u).collect())
        .collect();
    Ok(FluidParams {
        lambda_p,
        mu_k,
        x_p,
    })
}

/// Solution of `x' = lambda - mu x`, `x(0) = x0`, at time `t`.
pub fn ode_transient(lambda: f64, mu: f64, x0: f64, t: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidRate(format!("fluid rate must be positive, got {mu}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    let fixed = lambda / mu;
    Ok(fixed + (x0 - fixed) * (-mu * t).exp())
}

/// Busy fraction of each reserved block at the ICRD fixed point: `lambda_h p / mu`, and 0
/// where `p` is 0. Deeper queue-length levels are empty at the fixed point.
pub fn icrd_fixed_point(lambda_h: &[f64], p: &RoutingMatrix, mu: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if lambda_h.len() != p.rows() || mu.len() != p.rows() || mu.iter().any(|r| r.len() != p.cols()) {
        return Err(Error::InvalidArgument("lambda, mu and p shapes disagree".into()));
    }
    (0..p.rows())
        .map(|h| {
            (0..p.cols())
                .map(|m| {
                    let share = p.get(h, m);
                    if share == 0.0 {
                        Ok(0.0)
                    } else if mu[h][m] > 0.0 {
                        Ok(lambda_h[h] * share / mu[h][m])
                    } else {
                        Err(Error::IncompatibleRouting { h, m })
                    }
                })
                .collect()
        })
        .collect()
}

/// Target accuracy of the balance equation in [`stolyar_fixed_point`].
pub const STOLYAR_TOLERANCE: f64 = 1e-12;

/// Busy fractions `x_j < beta_j` of server pools with rates `mu_j` and sizes `beta_j`
/// fed at total rate `lambda`, such that `sum_j mu_j x_j = lambda` and the ratio
/// `mu_j x_j / (beta_j - x_j)` is common to all pools.
///
/// Writing the common ratio as `c` gives `x_j = c beta_j / (mu_j + c)`, so only the
/// increasing scalar equation `sum_j mu_j c beta_j / (mu_j + c) = lambda` is solved, by
/// bisection.
pub fn stolyar_fixed_point(lambda: f64, mu: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if mu.is_empty() || mu.len() != beta.len() {
        return Err(Error::InvalidArgument("need equally long, non-empty mu and beta".into()));
    }
    if mu.iter().chain(beta).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument("mu and beta must be positive".into()));
    }
    let capacity: f64 = mu.iter().zip(beta).map(|(m, b)| m * b).sum();
    if !(lambda >= 0.0 && lambda < capacity) {
        return Err(Error::InvalidArgument(format!(
            "arrival rate {lambda} is not below the capacity {capacity}"
        )));
    }
    let g = |c: f64| -> f64 { mu.iter().zip(beta).map(|(m, b)| m * c * b / (m + c)).sum() };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while g(hi) <= lambda {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidArgument("arrival rate too close to capacity".into()));
        }
    }
    let mut c = 0.5 * (lo + hi);
    for _ in 0..4096 {
        c = 0.5 * (lo + hi);
        let r = g(c) - lambda;
        if r.abs() <= STOLYAR_TOLERANCE || c <= lo || c >= hi {
            break;
        }
        if r < 0.0 {
            lo = c;
        } else {
            hi = c;
        }
    }
    Ok(mu.iter().zip(beta).map(|(m, b)| c * b / (m + c)).collect())
}

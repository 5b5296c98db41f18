//! Per-type loads, min-max routing, capacity-slack allocations and the dyadic
//! partition search for a subcritical certificate.

mod search;
pub(crate) mod simplex;

pub use search::{
    find_subcritical, plan_for_partition, refinement_history, LevelRecord, PartitionPlan, RateBound, SearchOptions,
    Verdict,
};

use simplex::{Constraint, LinearProgram, LpOutcome, Sense};

use crate::error::{Error, Result};

/// Feasibility and optimality tolerance of the routing LP.
pub const LP_TOLERANCE: f64 = 1e-9;
const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic routing matrix `p[h][m]`: share of class-`h` traffic sent to server type `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix(Vec<Vec<f64>>);

impl RoutingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("routing matrix must be non-empty and rectangular".into()));
        }
        for (h, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("routing row {h} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("routing row {h} sums to {sum}")));
            }
        }
        Ok(Self(rows))
    }

    pub fn identity(size: usize) -> Self {
        Self(
            (0..size)
                .map(|h| (0..size).map(|m| if h == m { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self(vec![vec![1.0 / cols as f64; cols]; rows])
    }

    pub fn rows(&self) -> usize {
        self.0.len()
    }

    pub fn cols(&self) -> usize {
        self.0[0].len()
    }

    pub fn get(&self, h: usize, m: usize) -> f64 {
        self.0[h][m]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.0[h]
    }

    pub fn as_rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn column_sum(&self, m: usize) -> f64 {
        self.0.iter().map(|r| r[m]).sum()
    }
}

/// Slack matrix `eps[h][m]` used to size reserved server blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonAllocation(pub Vec<Vec<f64>>);

impl EpsilonAllocation {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(vec![vec![0.0; cols]; rows])
    }

    pub fn get(&self, h: usize, m: usize) -> f64 {
        self.0[h][m]
    }

    /// Same direction, scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|r| r.iter().map(|e| e * factor).collect()).collect())
    }
}

fn check_shapes(lambda_h: &[f64], mu: &[Vec<f64>], widths: &[f64]) -> Result<()> {
    if mu.len() != lambda_h.len() || mu.iter().any(|r| r.len() != widths.len()) {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {} classes, mu {}x{}, {} widths",
            lambda_h.len(),
            mu.len(),
            mu.first().map_or(0, Vec::len),
            widths.len()
        )));
    }
    if widths.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidPartition("server group widths must be positive".into()));
    }
    if lambda_h.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidArgument("class arrival rates must be finite and >= 0".into()));
    }
    Ok(())
}

/// `rho_m = sum_h lambda_h p[h][m] / (mu[h][m] * width_m)`.
pub fn load_per_type(
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    v_widths: &[f64],
    p: &RoutingMatrix,
) -> Result<Vec<f64>> {
    check_shapes(lambda_h, mu, v_widths)?;
    if p.rows() != lambda_h.len() || p.cols() != v_widths.len() {
        return Err(Error::InvalidArgument("routing matrix shape mismatch".into()));
    }
    let mut rho = vec![0.0; v_widths.len()];
    for (h, &lam) in lambda_h.iter().enumerate() {
        for (m, load) in rho.iter_mut().enumerate() {
            let share = p.get(h, m);
            if share > 0.0 {
                if mu[h][m] <= 0.0 {
                    return Err(Error::IncompatibleRouting { h, m });
                }
                *load += lam * share / (mu[h][m] * v_widths[m]);
            }
        }
    }
    Ok(rho)
}

/// Solves `min rho` over row-stochastic `p` with `p[h][m] = 0` where `mu[h][m] = 0` and
/// every per-type load at most `rho`.
pub fn solve_minimax_routing(
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    v_widths: &[f64],
) -> Result<(f64, RoutingMatrix)> {
    check_shapes(lambda_h, mu, v_widths)?;
    let (h_count, m_count) = (lambda_h.len(), v_widths.len());
    if let Some(row) = mu.iter().position(|r| r.iter().all(|x| *x <= 0.0)) {
        return Err(Error::ZeroRow { row });
    }

    let cells: Vec<(usize, usize)> = (0..h_count)
        .flat_map(|h| (0..m_count).map(move |m| (h, m)))
        .filter(|&(h, m)| mu[h][m] > 0.0)
        .collect();
    let rho_var = cells.len();
    let vars = rho_var + 1;

    let mut constraints = Vec::with_capacity(h_count + m_count);
    for h in 0..h_count {
        let mut coeffs = vec![0.0; vars];
        for (k, &(ch, _)) in cells.iter().enumerate() {
            if ch == h {
                coeffs[k] = 1.0;
            }
        }
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Eq,
            rhs: 1.0,
        });
    }
    for m in 0..m_count {
        let mut coeffs = vec![0.0; vars];
        for (k, &(h, cm)) in cells.iter().enumerate() {
            if cm == m {
                coeffs[k] = lambda_h[h] / (mu[h][m] * v_widths[m]);
            }
        }
        coeffs[rho_var] = -1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Le,
            rhs: 0.0,
        });
    }
    let mut objective = vec![0.0; vars];
    objective[rho_var] = 1.0;

    let x = match simplex::solve(&LinearProgram { objective, constraints }, LP_TOLERANCE) {
        LpOutcome::Optimal { x, .. } => x,
        LpOutcome::Infeasible => return Err(Error::Lp("routing LP reported infeasible".into())),
        LpOutcome::Unbounded => return Err(Error::Lp("routing LP reported unbounded".into())),
    };

    let mut rows = vec![vec![0.0; m_count]; h_count];
    for (k, &(h, m)) in cells.iter().enumerate() {
        rows[h][m] = x[k].max(0.0);
    }
    for row in &mut rows {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p = (*p / sum).min(1.0));
    }
    let p = RoutingMatrix(rows);
    let rho = load_per_type(lambda_h, mu, v_widths, &p)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((rho, p))
}

/// Capacity slack `eps*_m = width_m - sum_h lambda_h p[h][m] / mu[h][m]`.
pub fn capacity_slack(
    p: &RoutingMatrix,
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    v_widths: &[f64],
) -> Result<Vec<f64>> {
    let rho = load_per_type(lambda_h, mu, v_widths, p)?;
    Ok(rho
        .iter()
        .zip(v_widths)
        .map(|(r, w)| w - r * w)
        .collect())
}

/// Headroom kept below the largest uniform-scale point of `Poly(p)`.
pub const EPSILON_SAFETY: f64 = 0.99;

/// Picks `eps[h][m] = alpha * p[h][m]` with the single largest `alpha` allowed by every
/// column slack, shrunk by [`EPSILON_SAFETY`].
pub fn epsilon_allocation(
    p: &RoutingMatrix,
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    v_widths: &[f64],
) -> Result<EpsilonAllocation> {
    let slack = capacity_slack(p, lambda_h, mu, v_widths)?;
    let mut alpha = f64::INFINITY;
    for (m, &s) in slack.iter().enumerate() {
        let column = p.column_sum(m);
        if column > 0.0 {
            if s <= 0.0 {
                return Err(Error::NotSubcritical { m, slack: s });
            }
            alpha = alpha.min(s / column);
        }
    }
    let alpha = EPSILON_SAFETY * alpha;
    Ok(EpsilonAllocation(
        p.as_rows()
            .iter()
            .map(|row| row.iter().map(|q| (alpha * q).min(1.0 - f64::EPSILON)).collect())
            .collect(),
    ))
}

/// Membership in `Poly(p)`: rows proportional to `p`, column sums within the capacity slack.
pub fn check_poly_membership(
    eps: &EpsilonAllocation,
    p: &RoutingMatrix,
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    v_widths: &[f64],
) -> bool {
    const TOL: f64 = 1e-9;
    let (h_count, m_count) = (p.rows(), p.cols());
    if eps.0.len() != h_count || eps.0.iter().any(|r| r.len() != m_count) {
        return false;
    }
    let Ok(slack) = capacity_slack(p, lambda_h, mu, v_widths) else {
        return false;
    };
    for (h, row) in eps.0.iter().enumerate() {
        if row.iter().any(|e| !(*e >= -TOL && *e < 1.0)) {
            return false;
        }
        // p rows sum to one, so the proportionality constant is the eps row sum.
        let alpha: f64 = row.iter().sum();
        if row
            .iter()
            .zip(p.row(h))
            .any(|(e, q)| (e - alpha * q).abs() > TOL)
        {
            return false;
        }
    }
    (0..m_count).all(|m| eps.0.iter().map(|r| r[m]).sum::<f64>() <= slack[m] + TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_load_and_lp() {
        let p = RoutingMatrix::new(vec![vec![1.0]]).unwrap();
        assert_eq!(load_per_type(&[0.5], &[vec![1.0]], &[1.0], &p).unwrap(), vec![0.5]);
        let (rho, p) = solve_minimax_routing(&[0.5], &[vec![1.0]], &[1.0]).unwrap();
        assert!((rho - 0.5).abs() < 1e-12);
        assert_eq!(p.as_rows(), &[vec![1.0]]);
    }

    #[test]
    fn identity_loads_on_reference_grid() {
        let lambda: Vec<f64> = (1..=5).map(|h| 0.1 * (2 * h - 1) as f64).collect();
        let diag = [1.0, 2.0, 3.5, 4.5, 6.0];
        let mu: Vec<Vec<f64>> = (0..5)
            .map(|h| (0..5).map(|m| if h == m { diag[h] } else { 0.3 }).collect())
            .collect();
        let rho = load_per_type(&lambda, &mu, &[0.2; 5], &RoutingMatrix::identity(5)).unwrap();
        for h in 0..5 {
            assert!((rho[h] - lambda[h] / (0.2 * diag[h])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_has_no_load() {
        let p = RoutingMatrix::new(vec![vec![1.0, 0.0]]).unwrap();
        let rho = load_per_type(&[1.0], &[vec![1.0, 0.0]], &[0.5, 0.5], &p).unwrap();
        assert_eq!(rho[1], 0.0);
    }

    #[test]
    fn routing_to_incompatible_cell_is_rejected() {
        let p = RoutingMatrix::new(vec![vec![0.5, 0.5]]).unwrap();
        let err = load_per_type(&[1.0], &[vec![1.0, 0.0]], &[0.5, 0.5], &p).unwrap_err();
        assert_eq!(err, Error::IncompatibleRouting { h: 0, m: 1 });
    }

    #[test]
    fn symmetric_two_by_two() {
        let (rho, p) =
            solve_minimax_routing(&[0.25, 0.25], &[vec![1.0, 1.0], vec![1.0, 1.0]], &[0.5, 0.5])
                .unwrap();
        assert!((rho - 0.5).abs() < 1e-9);
        let loads = load_per_type(&[0.25, 0.25], &[vec![1.0; 2], vec![1.0; 2]], &[0.5, 0.5], &p)
            .unwrap();
        assert!(loads.iter().all(|l| (l - 0.5).abs() < 1e-9));
    }

    #[test]
    fn uneven_rates_balance_load() {
        let (rho, p) = solve_minimax_routing(&[1.0], &[vec![2.0, 1.0]], &[0.5, 0.5]).unwrap();
        assert!((rho - 2.0 / 3.0).abs() < 1e-9);
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_row_is_rejected() {
        let err = solve_minimax_routing(&[1.0, 1.0], &[vec![1.0], vec![0.0]], &[1.0]).unwrap_err();
        assert_eq!(err, Error::ZeroRow { row: 1 });
    }

    #[test]
    fn epsilon_single_cell() {
        let p = RoutingMatrix::identity(1);
        let eps = epsilon_allocation(&p, &[0.5], &[vec![1.0]], &[1.0]).unwrap();
        assert!((eps.get(0, 0) - 0.495).abs() < 1e-12);
        assert!(check_poly_membership(&eps, &p, &[0.5], &[vec![1.0]], &[1.0]));
    }

    #[test]
    fn epsilon_identity_is_diagonal() {
        let lambda = [0.1, 0.3];
        let mu = vec![vec![1.0, 0.3], vec![0.3, 2.0]];
        let widths = [0.5, 0.5];
        let p = RoutingMatrix::identity(2);
        let eps = epsilon_allocation(&p, &lambda, &mu, &widths).unwrap();
        assert_eq!(eps.get(0, 1), 0.0);
        assert_eq!(eps.get(1, 0), 0.0);
        // One scalar for all rows: the tighter of the two column slacks.
        let alpha = (0.5f64 - 0.1).min(0.5 - 0.15) * EPSILON_SAFETY;
        assert!((eps.get(0, 0) - alpha).abs() < 1e-12);
        assert!(check_poly_membership(&eps, &p, &lambda, &mu, &widths));
    }

    #[test]
    fn poly_membership_cases() {
        let p = RoutingMatrix::new(vec![vec![0.5, 0.5]]).unwrap();
        let (lambda, mu, widths) = ([0.2], vec![vec![1.0, 1.0]], [0.5, 0.5]);
        assert!(check_poly_membership(&EpsilonAllocation::zeros(1, 2), &p, &lambda, &mu, &widths));
        let skewed = EpsilonAllocation(vec![vec![0.1, 0.05]]);
        assert!(!check_poly_membership(&skewed, &p, &lambda, &mu, &widths));
        let too_big = EpsilonAllocation(vec![vec![0.45, 0.45]]);
        assert!(!check_poly_membership(&too_big, &p, &lambda, &mu, &widths));
    }

    #[test]
    fn epsilon_rejects_overload() {
        let p = RoutingMatrix::identity(1);
        let err = epsilon_allocation(&p, &[2.0], &[vec![1.0]], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NotSubcritical { m: 0, .. }));
    }
}

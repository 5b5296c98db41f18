//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Only what the routing LPs need: minimize `c.x` subject to `a.x (<=|=|>=) b`, `x >= 0`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    width: usize,
    cells: Vec<f64>,
    basis: Vec<usize>,
    reduced: Vec<f64>,
    tol: f64,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(row, col);
        for c in 0..w {
            self.cells[row * w + c] *= inv;
        }
        self.cells[row * w + col] = 1.0;
        for r in 0..self.rows() {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor != 0.0 {
                for c in 0..w {
                    let delta = factor * self.cells[row * w + c];
                    self.cells[r * w + c] -= delta;
                }
                self.cells[r * w + col] = 0.0;
            }
        }
        let factor = self.reduced[col];
        if factor != 0.0 {
            for c in 0..w {
                self.reduced[c] -= factor * self.cells[row * w + c];
            }
            self.reduced[col] = 0.0;
        }
        self.basis[row] = col;
    }

    fn price(&mut self, costs: &[f64]) {
        let w = self.width;
        self.reduced = vec![0.0; w];
        self.reduced[..costs.len()].copy_from_slice(costs);
        for r in 0..self.rows() {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.reduced[c] -= cb * self.cells[r * w + c];
                }
            }
        }
    }

    /// Runs Bland's rule over columns `0..allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        loop {
            let Some(entering) = (0..allowed).find(|&c| self.reduced[c] < -self.tol) else {
                return true;
            };
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.rows() {
                let a = self.at(r, entering);
                if a > self.tol {
                    let ratio = self.rhs(r) / a;
                    leaving = match leaving {
                        None => Some((r, ratio)),
                        Some((best, best_ratio)) => {
                            if ratio < best_ratio - self.tol
                                || (ratio <= best_ratio + self.tol
                                    && self.basis[r] < self.basis[best])
                            {
                                Some((r, ratio))
                            } else {
                                Some((best, best_ratio))
                            }
                        }
                    };
                }
            }
            match leaving {
                Some((row, _)) => self.pivot(row, entering),
                None => return false,
            }
        }
    }
}

pub(crate) fn solve(lp: &LinearProgram, tol: f64) -> LpOutcome {
    let n = lp.objective.len();
    let rows = lp.constraints.len();

    // Flip rows with negative rhs so every rhs is >= 0.
    let normalized: Vec<(Vec<f64>, Sense, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            debug_assert_eq!(c.coeffs.len(), n);
            if c.rhs < 0.0 {
                let sense = match c.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (c.coeffs.iter().map(|a| -a).collect(), sense, -c.rhs)
            } else {
                (c.coeffs.clone(), c.sense, c.rhs)
            }
        })
        .collect();

    let slack_count = normalized.iter().filter(|c| c.1 != Sense::Eq).count();
    let artificial_count = normalized.iter().filter(|c| c.1 != Sense::Le).count();
    let structural = n + slack_count;
    let width = structural + artificial_count + 1;

    let mut cells = vec![0.0; rows * width];
    let mut basis = vec![0; rows];
    let (mut next_slack, mut next_artificial) = (n, structural);
    for (r, (coeffs, sense, rhs)) in normalized.iter().enumerate() {
        cells[r * width..r * width + n].copy_from_slice(coeffs);
        cells[r * width + width - 1] = *rhs;
        match sense {
            Sense::Le => {
                cells[r * width + next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                cells[r * width + next_slack] = -1.0;
                next_slack += 1;
                cells[r * width + next_artificial] = 1.0;
                basis[r] = next_artificial;
                next_artificial += 1;
            }
            Sense::Eq => {
                cells[r * width + next_artificial] = 1.0;
                basis[r] = next_artificial;
                next_artificial += 1;
            }
        }
    }

    let mut tableau = Tableau {
        width,
        cells,
        basis,
        reduced: Vec::new(),
        tol,
    };

    if artificial_count > 0 {
        let mut phase_one = vec![0.0; width - 1];
        phase_one[structural..].iter_mut().for_each(|c| *c = 1.0);
        tableau.price(&phase_one);
        tableau.optimize(width - 1);
        let infeasibility: f64 = (0..rows)
            .filter(|&r| tableau.basis[r] >= structural)
            .map(|r| tableau.rhs(r))
            .sum();
        let scale = 1.0 + normalized.iter().map(|c| c.2).fold(0.0, f64::max);
        if infeasibility > tol * scale {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis; rows with no structural
        // entry are redundant and keep their artificial pinned at zero.
        for r in 0..rows {
            if tableau.basis[r] >= structural {
                if let Some(c) = (0..structural).find(|&c| tableau.at(r, c).abs() > tol) {
                    tableau.pivot(r, c);
                }
            }
        }
    }

    let mut costs = vec![0.0; width - 1];
    costs[..n].copy_from_slice(&lp.objective);
    tableau.price(&costs);
    if !tableau.optimize(structural) {
        return LpOutcome::Unbounded;
    }

    let mut x = vec![0.0; n];
    for r in 0..rows {
        if tableau.basis[r] < n {
            x[tableau.basis[r]] = tableau.rhs(r);
        }
    }
    let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}

use super::{load_per_type, solve_minimax_routing, RoutingMatrix};
use crate::error::{Error, Result};
use crate::model::{
    cell_extrema, integrate_lambda, validate_breaks, ArrivalRateFunction, EnvelopeOptions,
    RateFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Subcritical,
    HeavyLoad,
    Undecided,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Subcritical => "subcritical",
            Verdict::HeavyLoad => "heavy-load",
            Verdict::Undecided => "undecided",
        }
    }
}

/// Which per-cell rate table the stored loads were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateBound {
    /// Cell minima (the envelope every real rate dominates).
    Lower,
    /// Cell maxima (optimistic rates used to certify heavy load).
    Upper,
}

/// One refinement level of the dyadic search: optimal min-max loads with cell-max
/// (`rho_bar`) and cell-min (`rho`) rates. Infeasible LPs are `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRecord {
    pub n: usize,
    pub rho_bar: f64,
    pub rho: f64,
}

/// A partition `(w, v)`, a routing matrix on it and the resulting per-type loads.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub w_breaks: Vec<f64>,
    pub v_breaks: Vec<f64>,
    pub p: RoutingMatrix,
    /// Class arrival masses `lambda_h`.
    pub lambda_h: Vec<f64>,
    /// Per-cell rates the loads refer to (see `rate_bound`).
    pub mu: Vec<Vec<f64>>,
    pub rate_bound: RateBound,
    pub rho_per_type: Vec<f64>,
    pub rho_max: f64,
    /// Load threshold the verdict was taken against (1 for hand-written plans).
    pub threshold: f64,
    pub verdict: Verdict,
    /// Refinement level that produced the plan, for search outputs.
    pub level: Option<usize>,
    pub history: Vec<LevelRecord>,
}

impl PartitionPlan {
    /// Evaluates a given `(w, v, p)` with known class masses and cell rates;
    /// subcritical iff every load is below one.
    pub fn evaluate(
        w_breaks: Vec<f64>,
        v_breaks: Vec<f64>,
        p: RoutingMatrix,
        lambda_h: Vec<f64>,
        mu: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_breaks(&w_breaks)?;
        validate_breaks(&v_breaks)?;
        let widths = widths(&v_breaks);
        let rho_per_type = load_per_type(&lambda_h, &mu, &widths, &p)?;
        let rho_max = rho_per_type.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            w_breaks,
            v_breaks,
            p,
            lambda_h,
            mu,
            rate_bound: RateBound::Lower,
            verdict: if rho_max < 1.0 {
                Verdict::Subcritical
            } else {
                Verdict::HeavyLoad
            },
            rho_per_type,
            rho_max,
            threshold: 1.0,
            level: None,
            history: Vec::new(),
        })
    }

    pub fn v_widths(&self) -> Vec<f64> {
        widths(&self.v_breaks)
    }

    pub fn classes(&self) -> usize {
        self.w_breaks.len() - 1
    }

    pub fn server_types(&self) -> usize {
        self.v_breaks.len() - 1
    }
}

pub(crate) fn widths(breaks: &[f64]) -> Vec<f64> {
    breaks.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Plan for a user-chosen partition: class masses by exact integration and cell rates
/// from the lower envelope of `f`.
pub fn plan_for_partition(
    lam: &ArrivalRateFunction,
    f: &RateFunction,
    xi: f64,
    w_breaks: Vec<f64>,
    v_breaks: Vec<f64>,
    p: RoutingMatrix,
    envelope: EnvelopeOptions,
) -> Result<PartitionPlan> {
    let lambda_h = w_breaks
        .windows(2)
        .map(|w| integrate_lambda(lam, w[0], w[1], xi))
        .collect::<Result<Vec<_>>>()?;
    let mu = cell_extrema(f, &w_breaks, &v_breaks, envelope)?.min;
    PartitionPlan::evaluate(w_breaks, v_breaks, p, lambda_h, mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Sampling of general surfaces at the finest level; coarser levels reuse the same
    /// global lattice so their cell extrema are nested exactly.
    pub envelope: EnvelopeOptions,
    /// Largest `2^n` allowed per axis.
    pub max_cells_per_axis: usize,
    /// Arrival scaling `xi = W / N`.
    pub xi: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            envelope: EnvelopeOptions::default(),
            max_cells_per_axis: 1 << 10,
            xi: 1.0,
        }
    }
}

struct Level {
    breaks: Vec<f64>,
    lambda_h: Vec<f64>,
    mu_hat: Vec<Vec<f64>>,
    mu_star: Vec<Vec<f64>>,
}

fn minimax_or_infinite(
    lambda_h: &[f64],
    mu: &[Vec<f64>],
    widths: &[f64],
) -> Result<Option<(f64, RoutingMatrix)>> {
    match solve_minimax_routing(lambda_h, mu, widths) {
        Ok(sol) => Ok(Some(sol)),
        Err(Error::ZeroRow { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_levels(n_max: usize, opts: &SearchOptions) -> Result<()> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if n_max >= usize::BITS as usize || (1usize << n_max) > opts.max_cells_per_axis {
        return Err(Error::InvalidArgument(format!(
            "2^{n_max} cells per axis exceeds the cap of {}",
            opts.max_cells_per_axis
        )));
    }
    Ok(())
}

/// Both min-max loads on the dyadic `2^n` grid. Every level samples general surfaces on
/// the lattice of the finest level `n_max`, so extrema of nested cells are nested.
fn compute_level(
    lam: &ArrivalRateFunction,
    f: &RateFunction,
    n: usize,
    n_max: usize,
    opts: &SearchOptions,
) -> Result<(Level, LevelRecord, PlanParts)> {
    let cells = 1usize << n;
    let breaks: Vec<f64> = (0..=cells).map(|k| k as f64 / cells as f64).collect();
    let lambda_h = breaks
        .windows(2)
        .map(|w| integrate_lambda(lam, w[0], w[1], opts.xi))
        .collect::<Result<Vec<_>>>()?;
    let envelope = EnvelopeOptions {
        samples_per_axis: opts.envelope.samples_per_axis << (n_max - n),
        ..opts.envelope
    };
    let extrema = cell_extrema(f, &breaks, &breaks, envelope)?;
    let widths = vec![1.0 / cells as f64; cells];

    let Some(optimistic) = minimax_or_infinite(&lambda_h, &extrema.max, &widths)? else {
        return Err(Error::InvalidRate(
            "rate surface vanishes on a whole task band".into(),
        ));
    };
    let pessimistic = minimax_or_infinite(&lambda_h, &extrema.min, &widths)?;
    let record = LevelRecord {
        n,
        rho_bar: optimistic.0,
        rho: pessimistic.as_ref().map_or(f64::INFINITY, |s| s.0),
    };
    let level = Level {
        breaks,
        lambda_h,
        mu_hat: extrema.max,
        mu_star: extrema.min,
    };
    let parts = PlanParts {
        optimistic: optimistic.1,
        pessimistic: pessimistic.map(|s| s.1),
    };
    Ok((level, record, parts))
}

/// Raw `(rho_bar, rho)` for every level `1..=n_max`, without stopping at a verdict.
pub fn refinement_history(
    lam: &ArrivalRateFunction,
    f: &RateFunction,
    n_max: usize,
    opts: SearchOptions,
) -> Result<Vec<LevelRecord>> {
    check_levels(n_max, &opts)?;
    (1..=n_max)
        .map(|n| compute_level(lam, f, n, n_max, &opts).map(|(_, record, _)| record))
        .collect()
}

/// Refines dyadic partitions `n = 1..=n_max` until the pessimistic min-max load drops
/// below `rho_star` (subcritical) or the optimistic one reaches it (heavy load).
pub fn find_subcritical(
    lam: &ArrivalRateFunction,
    f: &RateFunction,
    rho_star: f64,
    n_max: usize,
    opts: SearchOptions,
) -> Result<PartitionPlan> {
    if !(rho_star > 0.0 && rho_star < 1.0) {
        return Err(Error::InvalidArgument(format!("rho* = {rho_star} is not in (0, 1)")));
    }
    check_levels(n_max, &opts)?;

    let mut history = Vec::with_capacity(n_max);
    let mut last: Option<(Level, PlanParts)> = None;
    for n in 1..=n_max {
        let (level, record, parts) = compute_level(lam, f, n, n_max, &opts)?;
        history.push(record);

        // Empty polyhedra count as load 1.
        let rho_bar = record.rho_bar.min(1.0);
        let rho = record.rho.min(1.0);
        if rho_bar >= rho_star {
            return assemble(level, parts, Verdict::HeavyLoad, rho_star, n, history);
        }
        if rho < rho_star {
            return assemble(level, parts, Verdict::Subcritical, rho_star, n, history);
        }
        last = Some((level, parts));
    }
    let (level, parts) = last.expect("n_max >= 1");
    assemble(level, parts, Verdict::Undecided, rho_star, n_max, history)
}

struct PlanParts {
    optimistic: RoutingMatrix,
    pessimistic: Option<RoutingMatrix>,
}

fn assemble(
    level: Level,
    parts: PlanParts,
    verdict: Verdict,
    threshold: f64,
    n: usize,
    history: Vec<LevelRecord>,
) -> Result<PartitionPlan> {
    // Heavy load is certified by the optimistic rates; otherwise report the
    // pessimistic plan whenever it exists.
    let (p, mu, rate_bound) = match (verdict, parts.pessimistic) {
        (Verdict::HeavyLoad, _) | (_, None) => (parts.optimistic, level.mu_hat, RateBound::Upper),
        (_, Some(p)) => (p, level.mu_star, RateBound::Lower),
    };
    let widths = widths(&level.breaks);
    let rho_per_type = load_per_type(&level.lambda_h, &mu, &widths, &p)?;
    let rho_max = rho_per_type.iter().copied().fold(0.0, f64::max);
    Ok(PartitionPlan {
        w_breaks: level.breaks.clone(),
        v_breaks: level.breaks,
        p,
        lambda_h: level.lambda_h,
        mu,
        rate_bound,
        rho_per_type,
        rho_max,
        threshold,
        verdict,
        level: Some(n),
        history,
    })
}

use std::fmt;
use std::sync::Arc;

use super::{interval_index, validate_breaks};
use crate::error::{Error, Result};

/// Service-rate surface that is constant on every rectangle of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseRateFunction {
    w_breaks: Vec<f64>,
    v_breaks: Vec<f64>,
    rates: Vec<Vec<f64>>,
}

impl StepwiseRateFunction {
    pub fn new(w_breaks: Vec<f64>, v_breaks: Vec<f64>, rates: Vec<Vec<f64>>) -> Result<Self> {
        validate_breaks(&w_breaks)?;
        validate_breaks(&v_breaks)?;
        let (h, m) = (w_breaks.len() - 1, v_breaks.len() - 1);
        if rates.len() != h || rates.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidRate(format!(
                "rate table must be {h}x{m} to match the breaks"
            )));
        }
        for (row_idx, row) in rates.iter().enumerate() {
            if let Some(bad) = row.iter().find(|r| !r.is_finite() || **r < 0.0) {
                return Err(Error::InvalidRate(format!("cell rate {bad} in row {row_idx}")));
            }
            if row.iter().all(|r| *r == 0.0) {
                return Err(Error::ZeroRow { row: row_idx });
            }
        }
        Ok(Self {
            w_breaks,
            v_breaks,
            rates,
        })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![rate]])
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let h = interval_index(&self.w_breaks, x);
        let m = interval_index(&self.v_breaks, y);
        self.rates[h][m]
    }

    pub fn w_breaks(&self) -> &[f64] {
        &self.w_breaks
    }

    pub fn v_breaks(&self) -> &[f64] {
        &self.v_breaks
    }

    pub fn rates(&self) -> &[Vec<f64>] {
        &self.rates
    }

    pub fn rate(&self, h: usize, m: usize) -> f64 {
        self.rates[h][m]
    }

    pub fn rows(&self) -> usize {
        self.rates.len()
    }

    pub fn cols(&self) -> usize {
        self.v_breaks.len() - 1
    }
}

pub type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Arbitrary service-rate surface given by an evaluator closure.
#[derive(Clone)]
pub struct GeneralRateFunction {
    label: String,
    evaluator: Evaluator,
    lipschitz_bound: Option<f64>,
    floor_rate: f64,
}

impl fmt::Debug for GeneralRateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralRateFunction")
            .field("label", &self.label)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("floor_rate", &self.floor_rate)
            .finish_non_exhaustive()
    }
}

impl GeneralRateFunction {
    /// `floor_rate` is the declared rate every task band can reach somewhere; it is
    /// recorded, not verified globally.
    pub fn new(
        label: impl Into<String>,
        evaluator: Evaluator,
        lipschitz_bound: Option<f64>,
        floor_rate: f64,
    ) -> Result<Self> {
        if let Some(l) = lipschitz_bound {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidRate(format!("lipschitz bound {l}")));
            }
        }
        if !(floor_rate.is_finite() && floor_rate > 0.0) {
            return Err(Error::InvalidRate(format!("floor rate {floor_rate}")));
        }
        Ok(Self {
            label: label.into(),
            evaluator,
            lipschitz_bound,
            floor_rate,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.evaluator)(x, y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn floor_rate(&self) -> f64 {
        self.floor_rate
    }

    /// Largest finite-difference slope between neighbouring points of a `grid`×`grid` lattice.
    pub fn max_sampled_slope(&self, grid: usize) -> f64 {
        let step = 1.0 / grid as f64;
        let mut worst: f64 = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                let (x, y) = (i as f64 * step, j as f64 * step);
                let here = self.eval(x, y);
                if i + 1 < grid {
                    worst = worst.max((self.eval(x + step, y) - here).abs() / step);
                }
                if j + 1 < grid {
                    worst = worst.max((self.eval(x, y + step) - here).abs() / step);
                }
            }
        }
        worst
    }
}

/// One Gaussian bump `amplitude * exp(-|(x, y) - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub amplitude: f64,
    pub x: f64,
    pub y: f64,
    pub width: f64,
}

/// Smooth surface `base + sum of bumps`, with its Lipschitz bound computed in closed form.
pub fn bump_surface(base: f64, bumps: Vec<Bump>) -> Result<GeneralRateFunction> {
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::InvalidRate(format!("bump surface base {base}")));
    }
    for b in &bumps {
        if !(b.amplitude.is_finite() && b.amplitude >= 0.0 && b.width.is_finite() && b.width > 0.0)
        {
            return Err(Error::InvalidRate(format!("bad bump {b:?}")));
        }
    }
    // |grad| of a*exp(-r^2/2s^2) peaks at r = s with value a/s * e^{-1/2}.
    let lipschitz: f64 = bumps
        .iter()
        .map(|b| b.amplitude / b.width * (-0.5f64).exp())
        .sum();
    let label = format!("bumps(base={base}, n={})", bumps.len());
    let evaluator: Evaluator = Arc::new(move |x, y| {
        base + bumps
            .iter()
            .map(|b| {
                let r2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp()
            })
            .sum::<f64>()
    });
    GeneralRateFunction::new(label, evaluator, Some(lipschitz), base)
}

#[derive(Debug, Clone)]
pub enum RateFunction {
    Stepwise(StepwiseRateFunction),
    General(GeneralRateFunction),
}

impl RateFunction {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            RateFunction::Stepwise(f) => f.eval(x, y),
            RateFunction::General(f) => f.eval(x, y),
        }
    }

    pub fn as_stepwise(&self) -> Option<&StepwiseRateFunction> {
        match self {
            RateFunction::Stepwise(f) => Some(f),
            RateFunction::General(_) => None,
        }
    }
}

impl From<StepwiseRateFunction> for RateFunction {
    fn from(f: StepwiseRateFunction) -> Self {
        RateFunction::Stepwise(f)
    }
}

impl From<GeneralRateFunction> for RateFunction {
    fn from(f: GeneralRateFunction) -> Self {
        RateFunction::General(f)
    }
}

/// How cell extrema of a general surface are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptions {
    /// Lattice points per axis inside each cell (left-closed: `a + (b - a) i / k`).
    pub samples_per_axis: usize,
    /// Widen the sampled extrema by `L * spacing diagonal` when a Lipschitz bound is known,
    /// which turns them into true bounds.
    pub lipschitz_slack: bool,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            samples_per_axis: 16,
            lipschitz_slack: true,
        }
    }
}

/// Per-cell minimum and maximum of a rate surface over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellExtrema {
    pub min: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

pub fn cell_extrema(
    f: &RateFunction,
    w_breaks: &[f64],
    v_breaks: &[f64],
    opts: EnvelopeOptions,
) -> Result<CellExtrema> {
    validate_breaks(w_breaks)?;
    validate_breaks(v_breaks)?;
    if opts.samples_per_axis == 0 {
        return Err(Error::InvalidArgument("samples_per_axis must be positive".into()));
    }
    let (h_count, m_count) = (w_breaks.len() - 1, v_breaks.len() - 1);
    let mut min = vec![vec![f64::INFINITY; m_count]; h_count];
    let mut max = vec![vec![f64::NEG_INFINITY; m_count]; h_count];

    match f {
        RateFunction::Stepwise(step) => {
            // Exact: extrema over the source cells that intersect the target cell.
            let overlapping = |src: &[f64], a: f64, b: f64| -> Vec<usize> {
                (0..src.len() - 1)
                    .filter(|&k| src[k] < b && src[k + 1] > a)
                    .collect()
            };
            for h in 0..h_count {
                let rows = overlapping(step.w_breaks(), w_breaks[h], w_breaks[h + 1]);
                for m in 0..m_count {
                    let cols = overlapping(step.v_breaks(), v_breaks[m], v_breaks[m + 1]);
                    for &r in &rows {
                        for &c in &cols {
                            let value = step.rate(r, c);
                            min[h][m] = min[h][m].min(value);
                            max[h][m] = max[h][m].max(value);
                        }
                    }
                }
            }
        }
        RateFunction::General(general) => {
            let k = opts.samples_per_axis;
            for h in 0..h_count {
                let (a, b) = (w_breaks[h], w_breaks[h + 1]);
                for m in 0..m_count {
                    let (c, d) = (v_breaks[m], v_breaks[m + 1]);
                    for i in 0..k {
                        let x = a + (b - a) * i as f64 / k as f64;
                        for j in 0..k {
                            let y = c + (d - c) * j as f64 / k as f64;
                            let value = general.eval(x, y);
                            if !(value.is_finite() && value >= 0.0) {
                                return Err(Error::InvalidRate(format!(
                                    "f({x}, {y}) = {value}"
                                )));
                            }
                            min[h][m] = min[h][m].min(value);
                            max[h][m] = max[h][m].max(value);
                        }
                    }
                    if opts.lipschitz_slack {
                        if let Some(l) = general.lipschitz_bound() {
                            let slack = l * ((b - a) / k as f64).hypot((d - c) / k as f64);
                            min[h][m] = (min[h][m] - slack).max(0.0);
                            max[h][m] += slack;
                        }
                    }
                }
            }
        }
    }
    Ok(CellExtrema { min, max })
}

/// Per-cell minimum of `f` on the grid, as a stepwise surface.
///
/// Fails with [`Error::ZeroRow`] when some task band has no cell with a positive minimum.
pub fn lower_envelope(
    f: &RateFunction,
    w_breaks: &[f64],
    v_breaks: &[f64],
    opts: EnvelopeOptions,
) -> Result<StepwiseRateFunction> {
    let extrema = cell_extrema(f, w_breaks, v_breaks, opts)?;
    StepwiseRateFunction::new(w_breaks.to_vec(), v_breaks.to_vec(), extrema.min)
}

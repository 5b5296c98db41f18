use super::{interval_index, validate_breaks};
use crate::error::{Error, Result};

/// Per-dispatcher arrival intensity `lambda(x)` on `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalRateFunction {
    /// `lambda(x) = values[k]` on `[breaks[k], breaks[k+1])`.
    Stepwise { breaks: Vec<f64>, values: Vec<f64> },
    /// `lambda(x) = slope * x + intercept`.
    Affine { slope: f64, intercept: f64 },
}

impl ArrivalRateFunction {
    pub fn constant(value: f64) -> Result<Self> {
        Self::stepwise(vec![0.0, 1.0], vec![value])
    }

    pub fn stepwise(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_breaks(&breaks)?;
        if values.len() + 1 != breaks.len() {
            return Err(Error::InvalidArgument(
                "arrival step values must have one entry per interval".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("arrival rates must be finite and >= 0".into()));
        }
        let f = ArrivalRateFunction::Stepwise { breaks, values };
        f.check_mass()?;
        Ok(f)
    }

    pub fn affine(slope: f64, intercept: f64) -> Result<Self> {
        if !(slope.is_finite() && intercept.is_finite()) || intercept < 0.0 || slope + intercept < 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "affine arrival rate {slope}x + {intercept} is negative somewhere on [0, 1)"
            )));
        }
        let f = ArrivalRateFunction::Affine { slope, intercept };
        f.check_mass()?;
        Ok(f)
    }

    fn check_mass(&self) -> Result<()> {
        if self.total_mass() > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("arrival rate function has zero total mass".into()))
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ArrivalRateFunction::Stepwise { breaks, values } => values[interval_index(breaks, x)],
            ArrivalRateFunction::Affine { slope, intercept } => slope * x + intercept,
        }
    }

    /// `int_0^1 lambda(x) dx`.
    pub fn total_mass(&self) -> f64 {
        self.integral(0.0, 1.0)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            ArrivalRateFunction::Stepwise { breaks, values } => values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let overlap = b.min(breaks[k + 1]) - a.max(breaks[k]);
                    if overlap > 0.0 {
                        v * overlap
                    } else {
                        0.0
                    }
                })
                .sum(),
            ArrivalRateFunction::Affine { slope, intercept } => {
                0.5 * slope * (b * b - a * a) + intercept * (b - a)
            }
        }
    }
}

/// Class arrival mass `(1 / xi) * int_a^b lambda(x) dx`, in closed form.
pub fn integrate_lambda(lam: &ArrivalRateFunction, a: f64, b: f64, xi: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) || !(b > a && b <= 1.0) {
        return Err(Error::InvalidArgument(format!("interval [{a}, {b}) is not inside [0, 1]")));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(Error::InvalidArgument(format!("xi = {xi}")));
    }
    Ok(lam.integral(a, b) / xi)
}

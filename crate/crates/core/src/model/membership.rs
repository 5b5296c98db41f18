use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Maps dispatcher or server indices to coordinates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MembershipMap {
    /// Index `j` (0-based) of `n` maps to `j / n`.
    Equispaced,
    /// Independent uniform draws from a ChaCha8 stream; the `j`-th draw is the
    /// same for every `n > j`.
    SeededUniform { seed: u64 },
    Explicit(Vec<f64>),
}

impl MembershipMap {
    pub fn values(&self, count: usize) -> Result<Vec<f64>> {
        let values = match self {
            MembershipMap::Equispaced => {
                (0..count).map(|j| j as f64 / count as f64).collect::<Vec<_>>()
            }
            MembershipMap::SeededUniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..count).map(|_| rng.gen::<f64>()).collect()
            }
            MembershipMap::Explicit(values) => {
                if values.len() < count {
                    return Err(Error::InvalidArgument(format!(
                        "explicit membership list has {} values, {count} needed",
                        values.len()
                    )));
                }
                values[..count].to_vec()
            }
        };
        if let Some(bad) = values.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("membership value {bad} outside [0, 1)")));
        }
        Ok(values)
    }
}

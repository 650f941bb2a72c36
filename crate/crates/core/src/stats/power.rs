use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::normal_quantile;

/// The statistic a test-size calculation is for. All kinds use the Bernoulli
/// variance of a rate; the kind supplies a default base rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Pss,
    MaxTfr,
    BoundaryWidth,
}

impl MetricKind {
    pub fn default_base_rate(self) -> f64 {
        match self {
            MetricKind::Pss => 0.05,
            MetricKind::MaxTfr => 0.10,
            MetricKind::BoundaryWidth => 0.15,
        }
    }
}

/// Smallest `n` with `(z_{1-alpha/2} + z_power) * sqrt(p(1-p)/n) <= deviation`.
pub fn min_test_size(_kind: MetricKind, base_rate: f64, deviation: f64, power: f64, alpha: f64) -> Result<usize> {
    if !(base_rate > 0.0 && base_rate < 1.0) {
        return Err(Error::InvalidConfig(format!("base rate {base_rate} must lie in (0, 1)")));
    }
    if !(deviation > 0.0) {
        return Err(Error::InvalidConfig(format!("deviation {deviation} must be positive")));
    }
    if !(power > 0.0 && power < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig("power and alpha must lie in (0, 1)".into()));
    }
    let z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power);
    let exact = z * z * base_rate * (1.0 - base_rate) / (deviation * deviation);
    // Guard against the ceiling landing one above an exact integer.
    let mut n = exact.ceil() as usize;
    while n > 1 && z * (base_rate * (1.0 - base_rate) / (n - 1) as f64).sqrt() <= deviation {
        n -= 1;
    }
    Ok(n.max(1))
}

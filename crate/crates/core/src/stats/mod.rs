//! Bootstrap intervals, one-sided bootstrap p-values, Holm step-down,
//! test-size planning and coverage auditing.

mod bootstrap;
mod holm;
mod power;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use bootstrap::{
    bca_interval, bootstrap_p, empirical_coverage, normal_mean_coverage, resample_indices, BootstrapConfig,
    CoverageReport, IntervalEstimate, IntervalMethod, Strata, MIN_BOOTSTRAP_ROWS,
};
pub use holm::{holm_bonferroni, holm_with_exempt, HolmEntry, HolmFamily};
pub use power::{min_test_size, MetricKind};

/// Which side of its threshold a criterion's accept region lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Accept when the metric is below the threshold.
    UpperBounded,
    /// Accept when the metric is at or above the threshold.
    LowerBounded,
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal quantile, polished by one Newton step on the cdf.
pub fn normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    let z = n.inverse_cdf(p);
    if !z.is_finite() {
        return z;
    }
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        z - (n.cdf(z) - p) / density
    } else {
        z
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent RNG stream for `(seed, a, b)`.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.rotate_left(32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(normal_quantile(0.8)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn stream_seeds_differ() {
        let a = stream_seed(42, 0, 0);
        assert_ne!(a, stream_seed(42, 1, 0));
        assert_ne!(a, stream_seed(42, 0, 1));
        assert_ne!(a, stream_seed(43, 0, 0));
        assert_eq!(a, stream_seed(42, 0, 0));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{normal_cdf, normal_quantile, stream_seed, Direction};

/// Redraws allowed when a replicate's statistic is undefined.
const MAX_REDRAWS: u32 = 10;
/// Rows above which the jackknife leaves out blocks instead of single rows.
const JACKKNIFE_ROW_CAP: usize = 20_000;
pub const MIN_BOOTSTRAP_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Bca,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub method: IntervalMethod,
    pub stratify_by_label: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            seed: 42,
            alpha: 0.05,
            method: IntervalMethod::Bca,
            stratify_by_label: true,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::InvalidConfig(format!(
                "bootstrap needs at least 100 replicates, got {}",
                self.replicates
            )));
        }
        // alpha = 1 is allowed: it yields a zero-coverage interval, which the
        // coverage auditor uses as a boundary check.
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Row groups resampled independently (with replacement, sizes fixed).
#[derive(Debug, Clone, PartialEq)]
pub struct Strata {
    groups: Vec<Vec<usize>>,
    n: usize,
}

impl Strata {
    pub fn none(n: usize) -> Self {
        Strata {
            groups: vec![(0..n).collect()],
            n,
        }
    }

    pub fn by_label(labels: &[u8]) -> Self {
        let mut groups = vec![Vec::new(), Vec::new()];
        for (i, &l) in labels.iter().enumerate() {
            groups[usize::from(l != 0)].push(i);
        }
        groups.retain(|g| !g.is_empty());
        Strata {
            groups,
            n: labels.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Row indices of replicate `replicate`, draw `attempt`. Attempt 0 of a
/// given replicate is the same for every statistic, which pairs statistics
/// computed on the same rows.
pub fn resample_indices(strata: &Strata, seed: u64, replicate: u64, attempt: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, replicate, u64::from(attempt)));
    let mut out = Vec::with_capacity(strata.n);
    for g in &strata.groups {
        for _ in 0..g.len() {
            out.push(g[rng.random_range(0..g.len())]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub z0: Option<f64>,
    pub accel: Option<f64>,
    pub degenerate: bool,
    /// Every replicate equals the point estimate: the sampling distribution
    /// is a point mass rather than unknown.
    pub point_mass: bool,
    pub replicates_used: usize,
    pub discarded: usize,
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

impl IntervalEstimate {
    /// The interval used for decisions: `[lo, hi]`, or the zero-width
    /// interval at the point for a point mass.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ if self.point_mass => Some((self.point, self.point)),
            _ => None,
        }
    }

    pub fn p_boot(&self, threshold: f64, direction: Direction) -> Option<f64> {
        (!self.replicates.is_empty()).then(|| bootstrap_p(&self.replicates, threshold, direction))
    }
}

/// One-sided bootstrap p-value. For an upper-bounded criterion this is the
/// fraction of replicates at or above the threshold; for a lower-bounded
/// one, the fraction at or below. Clamped to `[1/(B+1), 1]`.
pub fn bootstrap_p(replicates: &[f64], threshold: f64, direction: Direction) -> f64 {
    let b = replicates.len();
    if b == 0 {
        return 1.0;
    }
    let count = match direction {
        Direction::UpperBounded => replicates.iter().filter(|&&r| r >= threshold).count(),
        Direction::LowerBounded => replicates.iter().filter(|&&r| r <= threshold).count(),
    };
    (count as f64 / b as f64).clamp(1.0 / (b as f64 + 1.0), 1.0)
}

/// BCa-adjusted percentile level for nominal level `q`. Exactly `q` when
/// `z0 = a = 0`.
fn bca_level(q: f64, z0: f64, a: f64) -> f64 {
    if z0 == 0.0 && a == 0.0 {
        return q;
    }
    let z = normal_quantile(q);
    let denom = 1.0 - a * (z0 + z);
    if denom <= 0.0 {
        return if z0 + z > 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(z0 + (z0 + z) / denom)
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn jackknife<F>(n: usize, statistic: &F) -> Vec<f64>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let k = if n > JACKKNIFE_ROW_CAP { n.div_ceil(JACKKNIFE_ROW_CAP) } else { 1 };
    let blocks = n.div_ceil(k);
    (0..blocks)
        .into_par_iter()
        .filter_map(|b| {
            let (start, end) = (b * k, ((b + 1) * k).min(n));
            let rows: Vec<usize> = (0..start).chain(end..n).collect();
            statistic(&rows).filter(|v| v.is_finite())
        })
        .collect()
}

/// Bootstrap confidence interval for `statistic`, a function of the row
/// indices it is evaluated on (duplicates allowed).
///
/// Replicates are computed in parallel with per-replicate RNG streams and
/// collected in order, so the result does not depend on the thread count.
/// A replicate whose statistic is undefined is redrawn up to 10 times and
/// then discarded.
pub fn bca_interval<F>(strata: &Strata, statistic: F, config: &BootstrapConfig) -> Result<IntervalEstimate>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    config.validate()?;
    let n = strata.n();
    if n < MIN_BOOTSTRAP_ROWS {
        return Err(Error::TooSmall {
            n,
            min: MIN_BOOTSTRAP_ROWS,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let point = statistic(&all)
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidConfig("statistic is undefined on the full sample".into()))?;

    let draws: Vec<Option<f64>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            (0..=MAX_REDRAWS).find_map(|attempt| {
                let idx = resample_indices(strata, config.seed, r, attempt);
                statistic(&idx).filter(|v| v.is_finite())
            })
        })
        .collect();
    let replicates: Vec<f64> = draws.iter().flatten().copied().collect();
    let discarded = draws.len() - replicates.len();

    let mut est = IntervalEstimate {
        point,
        lo: None,
        hi: None,
        z0: None,
        accel: None,
        degenerate: true,
        point_mass: false,
        replicates_used: replicates.len(),
        discarded,
        replicates: Vec::new(),
    };
    if replicates.is_empty() {
        return Ok(est);
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    est.replicates = replicates;
    if sorted[0] == sorted[sorted.len() - 1] {
        est.point_mass = sorted[0] == point;
        return Ok(est);
    }

    let b = sorted.len() as f64;
    let below = sorted.partition_point(|&r| r < point) as f64;
    let equal = sorted.partition_point(|&r| r <= point) as f64 - below;
    let frac = ((below + 0.5 * equal) / b).clamp(0.5 / b, 1.0 - 0.5 / b);

    let (z0, a) = match config.method {
        IntervalMethod::Percentile => (0.0, 0.0),
        IntervalMethod::Bca => {
            let jack = jackknife(n, &statistic);
            let m = jack.iter().sum::<f64>() / jack.len().max(1) as f64;
            let s2: f64 = jack.iter().map(|t| (m - t).powi(2)).sum();
            let s3: f64 = jack.iter().map(|t| (m - t).powi(3)).sum();
            if jack.len() < 2 || s2 == 0.0 {
                return Ok(est);
            }
            (normal_quantile(frac), s3 / (6.0 * s2.powf(1.5)))
        }
    };
    let adjust = |q: f64| bca_level(q, z0, a);
    let (q_lo, q_hi) = if config.method == IntervalMethod::Bca {
        (adjust(config.alpha / 2.0), adjust(1.0 - config.alpha / 2.0))
    } else {
        (config.alpha / 2.0, 1.0 - config.alpha / 2.0)
    };
    let lo = quantile_sorted(&sorted, q_lo).min(point);
    let hi = quantile_sorted(&sorted, q_hi).max(point);
    est.lo = Some(lo);
    est.hi = Some(hi);
    est.z0 = Some(if config.method == IntervalMethod::Bca { z0 } else { normal_quantile(frac) });
    est.accel = (config.method == IntervalMethod::Bca).then_some(a);
    est.degenerate = false;
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub covered: usize,
    pub degenerate: usize,
    pub coverage: f64,
}

/// Fraction of simulated datasets whose interval contains `true_value`.
/// Trial `t` draws its data and its bootstrap from streams derived from
/// `(config.seed, t)`.
pub fn empirical_coverage<G, S>(
    sampler: G,
    statistic: S,
    true_value: f64,
    trials: usize,
    config: &BootstrapConfig,
) -> Result<CoverageReport>
where
    G: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
    S: Fn(&[f64]) -> Option<f64> + Sync,
{
    config.validate()?;
    if trials < 100 {
        return Err(Error::InvalidConfig(format!("coverage needs at least 100 trials, got {trials}")));
    }
    let outcomes: Vec<Result<Option<bool>>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, t, u64::MAX));
            let data = sampler(&mut rng);
            let cfg = BootstrapConfig {
                seed: stream_seed(config.seed, t, 1),
                stratify_by_label: false,
                ..config.clone()
            };
            let est = bca_interval(
                &Strata::none(data.len()),
                |rows: &[usize]| {
                    let sub: Vec<f64> = rows.iter().map(|&r| data[r]).collect();
                    statistic(&sub)
                },
                &cfg,
            )?;
            Ok(est.bounds().map(|(lo, hi)| lo <= true_value && true_value <= hi))
        })
        .collect();
    let mut covered = 0;
    let mut degenerate = 0;
    for o in outcomes {
        match o? {
            Some(true) => covered += 1,
            Some(false) => {}
            None => degenerate += 1,
        }
    }
    Ok(CoverageReport {
        trials,
        covered,
        degenerate,
        coverage: covered as f64 / trials as f64,
    })
}

/// Coverage of the interval for the mean of `n` standard-normal draws.
pub fn normal_mean_coverage(n: usize, trials: usize, config: &BootstrapConfig) -> Result<CoverageReport> {
    empirical_coverage(
        |rng| (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        |v| Some(v.iter().sum::<f64>() / v.len() as f64),
        0.0,
        trials,
        config,
    )
}

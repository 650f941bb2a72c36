//! Metric kernels. Every kernel is a pure function over slices so the
//! bootstrap can call it on resampled rows.

mod deploy;
mod equity;
mod flips;
mod ranking;
mod subgroup;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use deploy::{latency, top3_consistency, top3_consistency_rows, DeployabilityReport, LatencyReport, Top3Consistency};
pub use equity::{equity_report, min_max_normalize, EquityReport, GroupGap};
pub use flips::{boundary_width, default_sweep, pfr, pss, tfr, tfr_sweep, TfrProfile, CLINICAL_BAND};
pub use ranking::{auc, average_ranks, spearman};
pub use subgroup::{ece, subgroup_report, GroupMetrics, SubgroupMetricReport, SubgroupOptions, MIN_EVALUABLE_GROUP};

/// Predicted probabilities, one per row, each finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Range(format!("score {v} at row {i} is outside [0, 1]")));
        }
        Ok(ScoreVector(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn select_rows(&self, rows: &[usize]) -> ScoreVector {
        ScoreVector(rows.iter().map(|&r| self.0[r]).collect())
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Mean squared error between probabilities and 0/1 labels.
pub fn brier(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_len("brier", scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Shape("brier of an empty vector".into()));
    }
    let sse: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| (s - f64::from(y)).powi(2))
        .sum();
    Ok(sse / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_vector_range() {
        assert!(ScoreVector::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(matches!(ScoreVector::new(vec![1.2]), Err(Error::Range(_))));
        assert!(ScoreVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn brier_trivia() {
        assert_eq!(brier(&[0.0, 1.0, 1.0], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 4], &[0, 1, 1, 0]).unwrap(), 0.25);
    }

    #[test]
    fn brier_matches_direct_formula() {
        let s = [0.12, 0.87, 0.45, 0.33, 0.91, 0.05, 0.66];
        let y = [0u8, 1, 0, 1, 1, 0, 0];
        let mut direct = 0.0;
        for i in 0..s.len() {
            let e = s[i] - y[i] as f64;
            direct += e * e;
        }
        direct /= s.len() as f64;
        assert!((brier(&s, &y).unwrap() - direct).abs() < 1e-15);
    }
}

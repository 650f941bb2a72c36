use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::error::{Error, Result};
use crate::explain::AttributionMatrix;
use crate::model::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Mean wall-clock milliseconds per full-cohort scoring call.
    pub cohort_ms: f64,
    pub per_patient_ms: f64,
    pub repetitions: usize,
    pub warmup: usize,
    pub n_rows: usize,
}

/// Times `repetitions` full-matrix scoring calls after `warmup` untimed ones.
/// Must not run concurrently with other CPU-heavy work.
pub fn latency(scorer: &dyn Scorer, x: &FeatureMatrix, repetitions: usize, warmup: usize) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("latency needs at least one timed call".into()));
    }
    for _ in 0..warmup {
        black_box(scorer.score(x)?);
    }
    let mut total_ns: u128 = 0;
    for _ in 0..repetitions {
        let start = Instant::now();
        black_box(scorer.score(x)?);
        total_ns += start.elapsed().as_nanos();
    }
    let cohort_ms = total_ns as f64 / repetitions as f64 / 1e6;
    Ok(LatencyReport {
        cohort_ms,
        per_patient_ms: if x.n_rows() > 0 { cohort_ms / x.n_rows() as f64 } else { 0.0 },
        repetitions,
        warmup,
        n_rows: x.n_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top3Consistency {
    pub f_top3: f64,
    /// Global top-3 features by mean absolute attribution.
    pub top3: Vec<String>,
}

/// Fraction of `rows` whose largest-|attribution| feature is among the
/// global top three (by mean |attribution| over the same rows), plus that
/// top-3 set as column indices. Ties break toward the lower column index.
pub fn top3_consistency_rows(values: &[f64], d: usize, rows: &[usize]) -> Result<(f64, [usize; 3])> {
    if d < 3 {
        return Err(Error::InvalidConfig(format!("top-3 consistency needs at least 3 features, got {d}")));
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("top-3 consistency over zero rows".into()));
    }
    let mut mean_abs = vec![0.0; d];
    for &r in rows {
        for (j, m) in mean_abs.iter_mut().enumerate() {
            *m += values[r * d + j].abs();
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let top = [order[0], order[1], order[2]];

    let hits = rows
        .iter()
        .filter(|&&r| {
            let row = &values[r * d..(r + 1) * d];
            let mut best = 0;
            for j in 1..d {
                if row[j].abs() > row[best].abs() {
                    best = j;
                }
            }
            top.contains(&best)
        })
        .count();
    Ok((hits as f64 / rows.len() as f64, top))
}

pub fn top3_consistency(attributions: &AttributionMatrix) -> Result<Top3Consistency> {
    let rows: Vec<usize> = (0..attributions.n_rows()).collect();
    let (f_top3, top) = top3_consistency_rows(attributions.values(), attributions.n_cols(), &rows)?;
    Ok(Top3Consistency {
        f_top3,
        top3: top.iter().map(|&j| attributions.feature_names()[j].clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployabilityReport {
    pub latency: Option<LatencyReport>,
    pub top3: Option<Top3Consistency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution_provider: Option<String>,
}

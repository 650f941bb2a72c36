use serde::{Deserialize, Serialize};

use crate::cohort::Partition;
use crate::error::{Error, Result};

use super::{check_len, spearman};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGap {
    pub attribute: String,
    pub group: String,
    pub n: usize,
    pub mean_score: f64,
    pub mean_need: f64,
    /// `mean_score - mean_need`; negative means the group is under-predicted.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityReport {
    pub proxy: String,
    pub rho_need: f64,
    pub gaps: Vec<GroupGap>,
    pub proxy_is_outcome_label: bool,
}

impl EquityReport {
    /// Largest `|gap|` over groups of at least `min_size` rows.
    pub fn max_abs_gap(&self, min_size: usize) -> Option<f64> {
        self.gaps
            .iter()
            .filter(|g| g.n >= min_size)
            .map(|g| g.gap.abs())
            .reduce(f64::max)
    }
}

/// Min-max scales `values` onto `[0, 1]`.
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::UndefinedCorrelation("need proxy is constant".into()));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Need-prediction alignment: Spearman correlation between scores and the
/// proxy, and per-group gaps against the min-max normalized proxy.
pub fn equity_report(
    proxy_name: &str,
    scores: &[f64],
    proxy: &[f64],
    partitions: &[(&str, &Partition)],
    proxy_is_outcome_label: bool,
) -> Result<EquityReport> {
    check_len("equity_report", scores.len(), proxy.len())?;
    if proxy.iter().any(|v| !v.is_finite()) {
        return Err(Error::Range(format!("proxy `{proxy_name}` has non-finite values")));
    }
    let need = min_max_normalize(proxy)?;
    let rho_need = spearman(scores, proxy)?;
    let mut gaps = Vec::new();
    for (attribute, partition) in partitions {
        check_len("equity_report partition", scores.len(), partition.len())?;
        for (code, rows) in partition.group_rows().into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let k = rows.len() as f64;
            let mean_score = rows.iter().map(|&r| scores[r]).sum::<f64>() / k;
            let mean_need = rows.iter().map(|&r| need[r]).sum::<f64>() / k;
            gaps.push(GroupGap {
                attribute: attribute.to_string(),
                group: partition.levels()[code].clone(),
                n: rows.len(),
                mean_score,
                mean_need,
                gap: mean_score - mean_need,
            });
        }
    }
    Ok(EquityReport {
        proxy: proxy_name.to_string(),
        rho_need,
        gaps,
        proxy_is_outcome_label,
    })
}

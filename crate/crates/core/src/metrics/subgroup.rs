use serde::{Deserialize, Serialize};

use crate::cohort::Partition;
use crate::error::{Error, Result};

use super::{auc, check_len};

/// Groups smaller than this are reported but excluded from gap and
/// calibration gating.
pub const MIN_EVALUABLE_GROUP: usize = 30;

/// Expected calibration error over `bins` equal-width probability bins.
/// Empty bins carry zero weight.
pub fn ece(scores: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    check_len("ece", scores.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; bins];
    let mut sum_score = vec![0.0; bins];
    let mut sum_label = vec![0.0; bins];
    for (&s, &y) in scores.iter().zip(labels) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        sum_score[b] += s;
        sum_label[b] += f64::from(y);
    }
    let n = scores.len() as f64;
    let total = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (sum_label[b] / c - sum_score[b] / c).abs()
        })
        .sum::<f64>();
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupOptions {
    pub ece_bins: usize,
    pub min_group_size: usize,
    /// When set, per-group selection rates at this threshold and the
    /// min/max adverse-impact ratio are reported.
    pub selection_threshold: Option<f64>,
}

impl Default for SubgroupOptions {
    fn default() -> Self {
        SubgroupOptions {
            ece_bins: 10,
            min_group_size: MIN_EVALUABLE_GROUP,
            selection_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    pub n_positive: usize,
    pub auc: Option<f64>,
    /// Why `auc` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_note: Option<String>,
    pub ece: f64,
    /// Below the minimum group size; reported only.
    pub small_group: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetricReport {
    pub attribute: String,
    pub groups: Vec<GroupMetrics>,
    /// Max minus min AUC over evaluable groups.
    pub auc_gap: f64,
    /// Largest ECE among evaluable groups.
    pub max_ece: f64,
    pub small_groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adverse_impact_ratio: Option<f64>,
}

impl SubgroupMetricReport {
    fn evaluable(&self) -> impl Iterator<Item = &GroupMetrics> {
        self.groups.iter().filter(|g| !g.small_group)
    }
}

pub fn subgroup_report(
    attribute: &str,
    scores: &[f64],
    labels: &[u8],
    partition: &Partition,
    options: &SubgroupOptions,
) -> Result<SubgroupMetricReport> {
    check_len("subgroup_report", scores.len(), labels.len())?;
    check_len("subgroup_report partition", scores.len(), partition.len())?;
    let mut groups = Vec::new();
    for (code, rows) in partition.group_rows().into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let s: Vec<f64> = rows.iter().map(|&r| scores[r]).collect();
        let y: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
        let (auc, auc_note) = match auc(&s, &y) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        groups.push(GroupMetrics {
            group: partition.levels()[code].clone(),
            n: rows.len(),
            n_positive: y.iter().filter(|&&l| l == 1).count(),
            auc,
            auc_note,
            ece: ece(&s, &y, options.ece_bins)?,
            small_group: rows.len() < options.min_group_size,
            selection_rate: options
                .selection_threshold
                .map(|t| s.iter().filter(|&&v| v >= t).count() as f64 / s.len() as f64),
        });
    }

    let mut report = SubgroupMetricReport {
        attribute: attribute.to_string(),
        small_groups: groups.iter().filter(|g| g.small_group).map(|g| g.group.clone()).collect(),
        groups,
        auc_gap: 0.0,
        max_ece: 0.0,
        adverse_impact_ratio: None,
    };
    let aucs: Vec<f64> = report.evaluable().filter_map(|g| g.auc).collect();
    if aucs.is_empty() {
        return Err(Error::NoEvaluableGroups(attribute.to_string()));
    }
    let hi = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
    report.auc_gap = hi - lo;
    report.max_ece = report.evaluable().map(|g| g.ece).fold(0.0, f64::max);
    if options.selection_threshold.is_some() {
        let rates: Vec<f64> = report.evaluable().filter_map(|g| g.selection_rate).collect();
        let max = rates.iter().cloned().fold(0.0, f64::max);
        let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        report.adverse_impact_ratio = (max > 0.0).then(|| min / max);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ece_zero_when_bins_calibrated() {
        // Bin [0.2, 0.3): five scores averaging 0.2 with one positive.
        // Bin [0.8, 0.9): five scores averaging 0.8 with four positives.
        let scores = [0.2, 0.2, 0.2, 0.2, 0.2, 0.8, 0.8, 0.8, 0.8, 0.8];
        let labels = [1, 0, 0, 0, 0, 1, 1, 1, 1, 0];
        assert!(ece(&scores, &labels, 10).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ece_three_bin_hand_computation() {
        let scores = [0.1, 0.2, 0.5, 0.6, 0.9, 0.95];
        let labels = [0, 1, 1, 1, 0, 1];
        // bins of width 1/3: {0.1, 0.2}, {0.5, 0.6}, {0.9, 0.95}
        let expected = (2.0 / 6.0) * (0.5f64 - 0.15).abs()
            + (2.0 / 6.0) * (1.0f64 - 0.55).abs()
            + (2.0 / 6.0) * (0.5f64 - 0.925).abs();
        assert!((ece(&scores, &labels, 3).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ece_top_edge_lands_in_last_bin() {
        assert_eq!(ece(&[1.0], &[1], 10).unwrap(), 0.0);
    }

    fn three_group_fixture() -> (Vec<f64>, Vec<u8>, Partition) {
        let mut s = Vec::new();
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (k, key) in ["a", "b", "c"].iter().enumerate() {
            for i in 0..40 {
                let label = (i % 2) as u8;
                // Overlap grows with k, lowering AUC group by group.
                let base = if label == 1 { 0.6 } else { 0.4 };
                let jitter = ((i * 7 + k * 3) % 11) as f64 / 11.0 * (0.1 + 0.2 * k as f64);
                s.push((base + if label == 1 { -jitter } else { jitter }).clamp(0.0, 1.0));
                y.push(label);
                g.push(*key);
            }
        }
        (s, y, Partition::from_keys(&g))
    }

    fn brute_auc(s: &[f64], y: &[u8]) -> f64 {
        let (mut w, mut p) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    p += 1.0;
                    w += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        w / p
    }

    #[test]
    fn gap_equals_brute_force_range() {
        let (s, y, part) = three_group_fixture();
        let report = subgroup_report("g", &s, &y, &part, &SubgroupOptions::default()).unwrap();
        let per_group: Vec<f64> = part
            .group_rows()
            .iter()
            .map(|rows| {
                let gs: Vec<f64> = rows.iter().map(|&r| s[r]).collect();
                let gy: Vec<u8> = rows.iter().map(|&r| y[r]).collect();
                brute_auc(&gs, &gy)
            })
            .collect();
        let max = per_group.iter().cloned().fold(f64::MIN, f64::max);
        let min = per_group.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min > 0.05);
        assert!((report.auc_gap - (max - min)).abs() < 1e-15);
    }

    #[test]
    fn identical_groups_have_zero_gap() {
        let s: Vec<f64> = (0..120).map(|i| ((i % 60) as f64 + 0.5) / 60.0).collect();
        let y: Vec<u8> = (0..120).map(|i| u8::from((i % 60) % 3 == 0)).collect();
        let g: Vec<&str> = (0..120).map(|i| if i < 60 { "x" } else { "y" }).collect();
        let r = subgroup_report("g", &s, &y, &Partition::from_keys(&g), &SubgroupOptions::default()).unwrap();
        assert_eq!(r.auc_gap, 0.0);
    }

    #[test]
    fn small_groups_flagged_and_excluded() {
        let (mut s, mut y, base) = three_group_fixture();
        let without = subgroup_report("g", &s, &y, &base, &SubgroupOptions::default()).unwrap();
        let mut keys: Vec<&str> = (0..120).map(|i| ["a", "b", "c"][i / 40]).collect();
        for i in 0..10 {
            s.push(if i % 2 == 0 { 0.99 } else { 0.01 });
            y.push((i % 2) as u8);
            keys.push("tiny");
        }
        let r = subgroup_report("g", &s, &y, &Partition::from_keys(&keys), &SubgroupOptions::default()).unwrap();
        assert_eq!(r.small_groups, vec!["tiny".to_string()]);
        let tiny = r.groups.iter().find(|g| g.group == "tiny").unwrap();
        assert!(tiny.auc.is_some() && tiny.small_group);
        // The tiny group's inverted AUC (0.0) must not enter the gap.
        assert_eq!(tiny.auc, Some(0.0));
        assert_eq!(r.auc_gap, without.auc_gap);
    }

    #[test]
    fn single_evaluable_group_gap_zero() {
        let s: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let mut keys = vec!["big"; 40];
        let mut s2 = s.clone();
        let mut y2 = y.clone();
        for i in 0..5 {
            s2.push(0.5);
            y2.push((i % 2) as u8);
            keys.push("small");
        }
        let r = subgroup_report("g", &s2, &y2, &Partition::from_keys(&keys), &SubgroupOptions::default()).unwrap();
        assert_eq!(r.auc_gap, 0.0);
    }

    #[test]
    fn all_groups_small_is_an_error() {
        let s = [0.1, 0.9, 0.2, 0.8];
        let y = [0, 1, 0, 1];
        let p = Partition::from_keys(&["a", "a", "b", "b"]);
        let err = subgroup_report("g", &s, &y, &p, &SubgroupOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoEvaluableGroups(_)));
    }

    #[test]
    fn single_class_group_reported_absent() {
        let mut s: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let mut y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let mut keys = vec!["mixed"; 40];
        for _ in 0..35 {
            s.push(0.3);
            y.push(0);
            keys.push("negatives");
        }
        let r = subgroup_report("g", &s, &y, &Partition::from_keys(&keys), &SubgroupOptions::default()).unwrap();
        let neg = r.groups.iter().find(|g| g.group == "negatives").unwrap();
        assert!(neg.auc.is_none() && neg.auc_note.is_some());
    }

    #[test]
    fn adverse_impact_ratio() {
        let (s, y, part) = three_group_fixture();
        let opts = SubgroupOptions {
            selection_threshold: Some(0.5),
            ..Default::default()
        };
        let r = subgroup_report("g", &s, &y, &part, &opts).unwrap();
        let air = r.adverse_impact_ratio.unwrap();
        assert!(air > 0.0 && air <= 1.0);
    }
}

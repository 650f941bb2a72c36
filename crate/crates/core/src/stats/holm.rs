use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmEntry {
    pub id: String,
    /// `None` for exempt members.
    pub p: Option<f64>,
    /// 1-based position in the step-down order.
    pub step: usize,
    pub adjusted_alpha: Option<f64>,
    pub rejected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exempt_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmFamily {
    pub alpha: f64,
    pub m: usize,
    /// Tested members in ascending p order, then exempt members.
    pub entries: Vec<HolmEntry>,
}

impl HolmFamily {
    pub fn get(&self, id: &str) -> Option<&HolmEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn rejected(&self, id: &str) -> Option<bool> {
        self.get(id).filter(|e| e.p.is_some()).map(|e| e.rejected)
    }
}

pub fn holm_bonferroni(family: &[(String, f64)], alpha: f64) -> Result<HolmFamily> {
    holm_with_exempt(family, &[], alpha)
}

/// Holm step-down over `tested`. Exempt members count toward `m` but are
/// never tested; they sit after every tested member.
pub fn holm_with_exempt(tested: &[(String, f64)], exempt: &[(String, String)], alpha: f64) -> Result<HolmFamily> {
    let m = tested.len() + exempt.len();
    if m == 0 {
        return Err(Error::InvalidConfig("Holm family is empty".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("family alpha {alpha} must lie in (0, 1)")));
    }
    if let Some((id, p)) = tested.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(Error::Range(format!("p-value {p} for `{id}` outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..tested.len()).collect();
    order.sort_by(|&a, &b| tested[a].1.total_cmp(&tested[b].1));

    let mut entries = Vec::with_capacity(m);
    let mut still_rejecting = true;
    for (k, &i) in order.iter().enumerate() {
        let (id, p) = &tested[i];
        let adjusted = alpha / (m - k) as f64;
        still_rejecting &= *p <= adjusted;
        entries.push(HolmEntry {
            id: id.clone(),
            p: Some(*p),
            step: k + 1,
            adjusted_alpha: Some(adjusted),
            rejected: still_rejecting,
            exempt_reason: None,
        });
    }
    for (k, (id, reason)) in exempt.iter().enumerate() {
        entries.push(HolmEntry {
            id: id.clone(),
            p: None,
            step: tested.len() + k + 1,
            adjusted_alpha: None,
            rejected: false,
            exempt_reason: Some(reason.clone()),
        });
    }
    Ok(HolmFamily { alpha, m, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fam(ps: &[f64]) -> Vec<(String, f64)> {
        ps.iter().enumerate().map(|(i, p)| (format!("t{i}"), *p)).collect()
    }

    #[test]
    fn single_test_is_plain_alpha() {
        assert!(holm_bonferroni(&fam(&[0.049]), 0.05).unwrap().entries[0].rejected);
        assert!(!holm_bonferroni(&fam(&[0.051]), 0.05).unwrap().entries[0].rejected);
    }

    #[test]
    fn empty_family_is_error() {
        assert!(holm_bonferroni(&[], 0.05).is_err());
    }

    #[test]
    fn step_thresholds() {
        let h = holm_bonferroni(&fam(&[0.0005, 0.0009, 0.06, 0.16, 0.43, 0.0009, 0.0009, 0.5]), 0.05).unwrap();
        assert_eq!(h.entries[0].adjusted_alpha, Some(0.05 / 8.0));
        assert_eq!(h.entries[7].adjusted_alpha, Some(0.05));
        assert!(h.rejected("t0").unwrap());
        assert!(!h.rejected("t2").unwrap());
    }

    #[test]
    fn exempt_members_count_toward_m() {
        let h = holm_with_exempt(&fam(&[0.007]), &[("D1".into(), "hardware-bounded".into())], 0.05).unwrap();
        assert_eq!(h.m, 2);
        assert_eq!(h.entries[0].adjusted_alpha, Some(0.025));
        assert_eq!(h.rejected("D1"), None);
    }

    proptest! {
        #[test]
        fn monotone_and_between_bonferroni_and_raw(ps in prop::collection::vec(0.0f64..0.2, 1..12)) {
            let f = fam(&ps);
            let h = holm_bonferroni(&f, 0.05).unwrap();
            let mut seen_accept = false;
            for e in &h.entries {
                if seen_accept { prop_assert!(!e.rejected); }
                if !e.rejected { seen_accept = true; }
                let p = e.p.unwrap();
                if p <= 0.05 / ps.len() as f64 { prop_assert!(e.rejected); }
                if e.rejected { prop_assert!(p <= 0.05); }
            }
        }
    }
}

//! Sub-criterion verdicts, Holm-corrected assembly and the deployment gate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EquityReport;
use crate::stats::{bootstrap_p, holm_with_exempt, Direction, HolmFamily, IntervalEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CriterionId {
    R1,
    R2,
    I1,
    I2,
    S1,
    S2,
    E1,
    E2,
    D1,
    D2,
}

impl CriterionId {
    pub const ALL: [CriterionId; 10] = [
        CriterionId::R1,
        CriterionId::R2,
        CriterionId::I1,
        CriterionId::I2,
        CriterionId::S1,
        CriterionId::S2,
        CriterionId::E1,
        CriterionId::E2,
        CriterionId::D1,
        CriterionId::D2,
    ];

    pub fn dimension(self) -> Dimension {
        use CriterionId::*;
        match self {
            R1 | R2 => Dimension::Reliability,
            I1 | I2 => Dimension::Inclusivity,
            S1 | S2 => Dimension::Sensitivity,
            E1 | E2 => Dimension::Equity,
            D1 | D2 => Dimension::Deployability,
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for CriterionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Reliability,
    Inclusivity,
    Sensitivity,
    Equity,
    Deployability,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Reliability,
        Dimension::Inclusivity,
        Dimension::Sensitivity,
        Dimension::Equity,
        Dimension::Deployability,
    ];

    pub fn gating(self) -> bool {
        self != Dimension::Equity
    }

    pub fn title(self) -> &'static str {
        match self {
            Dimension::Reliability => "Reliability",
            Dimension::Inclusivity => "Inclusivity",
            Dimension::Sensitivity => "Sensitivity",
            Dimension::Equity => "Equity",
            Dimension::Deployability => "Deployability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCriterion {
    pub id: CriterionId,
    pub metric: String,
    pub threshold: f64,
    pub direction: Direction,
    pub gating: bool,
    pub ci_backed: bool,
}

impl SubCriterion {
    fn new(id: CriterionId, metric: &str, threshold: f64, direction: Direction, ci_backed: bool) -> Self {
        SubCriterion {
            id,
            metric: metric.to_string(),
            threshold,
            direction,
            gating: id.dimension().gating(),
            ci_backed,
        }
    }
}

/// The ten sub-criteria at their default thresholds.
pub fn default_criteria() -> Vec<SubCriterion> {
    use CriterionId::*;
    use Direction::*;
    vec![
        SubCriterion::new(R1, "pss", 0.05, UpperBounded, true),
        SubCriterion::new(R2, "min_spearman_perturbed", 0.95, LowerBounded, false),
        SubCriterion::new(I1, "auc_gap", 0.05, UpperBounded, true),
        SubCriterion::new(I2, "max_subgroup_ece", 0.10, UpperBounded, false),
        SubCriterion::new(S1, "max_tfr", 0.10, UpperBounded, true),
        SubCriterion::new(S2, "boundary_width", 0.15, UpperBounded, false),
        SubCriterion::new(E1, "rho_need", 0.70, LowerBounded, true),
        SubCriterion::new(E2, "max_abs_need_gap", 0.10, UpperBounded, false),
        SubCriterion::new(D1, "latency_ms", 500.0, UpperBounded, false),
        SubCriterion::new(D2, "f_top3", 0.80, LowerBounded, false),
    ]
}

/// Default criteria with some thresholds replaced.
pub fn criteria_with_overrides(overrides: &BTreeMap<CriterionId, f64>) -> Result<Vec<SubCriterion>> {
    let mut out = default_criteria();
    for (id, t) in overrides {
        if !t.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold for {id} is not finite")));
        }
        out.iter_mut().find(|c| c.id == *id).expect("all ids present").threshold = *t;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Diagnostic,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Diagnostic => "DIAGNOSTIC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    CiBracketsThreshold,
    HolmDisagreement,
    DegenerateInterval,
    BelowInformativeFloor,
    /// The criterion could not be computed (e.g. no attributions supplied).
    NotEvaluated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub reason: Option<ReasonCode>,
}

impl Classification {
    fn of(verdict: Verdict) -> Self {
        Classification { verdict, reason: None }
    }

    fn inconclusive(reason: ReasonCode) -> Self {
        Classification {
            verdict: Verdict::Inconclusive,
            reason: Some(reason),
        }
    }
}

/// The CI decision rule against an explicit interval.
pub fn classify_interval(lo: f64, hi: f64, threshold: f64, direction: Direction) -> Classification {
    let (pass, fail) = match direction {
        Direction::UpperBounded => (hi < threshold, lo > threshold),
        Direction::LowerBounded => (lo > threshold, hi < threshold),
    };
    if pass {
        Classification::of(Verdict::Pass)
    } else if fail {
        Classification::of(Verdict::Fail)
    } else {
        Classification::inconclusive(ReasonCode::CiBracketsThreshold)
    }
}

/// Point comparison for criteria without a CI rule. The boundary value
/// passes.
pub fn classify_point(value: f64, threshold: f64, direction: Direction) -> Classification {
    let pass = match direction {
        Direction::UpperBounded => value <= threshold,
        Direction::LowerBounded => value >= threshold,
    };
    Classification::of(if pass { Verdict::Pass } else { Verdict::Fail })
}

/// Verdict of one criterion from its estimate, before multiplicity
/// correction.
pub fn classify(estimate: &IntervalEstimate, criterion: &SubCriterion) -> Classification {
    if !criterion.gating {
        return Classification::of(Verdict::Diagnostic);
    }
    if !criterion.ci_backed {
        return classify_point(estimate.point, criterion.threshold, criterion.direction);
    }
    match estimate.bounds() {
        Some((lo, hi)) => classify_interval(lo, hi, criterion.threshold, criterion.direction),
        None => Classification::inconclusive(ReasonCode::DegenerateInterval),
    }
}

/// Verdicts of a fixed interval at alternative thresholds.
pub fn threshold_sweep(lo: f64, hi: f64, direction: Direction, thresholds: &[f64]) -> Result<Vec<(f64, Verdict)>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("threshold sweep is empty".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&t| (t, classify_interval(lo, hi, t, direction).verdict))
        .collect())
}

/// One-sided p-value against the verdict the point estimate argues
/// against: small when the replicates sit firmly on the point's side.
pub fn directional_p(replicates: &[f64], point: f64, threshold: f64, direction: Direction) -> f64 {
    let point_accepts = match direction {
        Direction::UpperBounded => point < threshold,
        Direction::LowerBounded => point >= threshold,
    };
    let null_side = match (direction, point_accepts) {
        (Direction::UpperBounded, true) | (Direction::LowerBounded, false) => Direction::UpperBounded,
        _ => Direction::LowerBounded,
    };
    bootstrap_p(replicates, threshold, null_side)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    /// Bootstrap estimate (point checks use its point and replicates).
    Estimate(IntervalEstimate),
    /// A value with no resampling distribution; exempt from Holm.
    Point { value: f64, exempt_reason: String },
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionInput {
    pub evidence: Evidence,
    /// Rows behind the estimate and the smallest test size that makes the
    /// interval informative, when known.
    pub informative_floor: Option<(usize, usize)>,
}

impl CriterionInput {
    pub fn new(evidence: Evidence) -> Self {
        CriterionInput {
            evidence,
            informative_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionResult {
    pub id: CriterionId,
    pub dimension: Dimension,
    pub metric: String,
    pub threshold: f64,
    pub direction: Direction,
    pub gating: bool,
    pub ci_backed: bool,
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub p_boot: Option<f64>,
    /// Verdict from the CI (or point) rule alone.
    pub rule_verdict: Option<Verdict>,
    pub verdict: Verdict,
    pub reason: Option<ReasonCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionResult {
    pub dimension: Dimension,
    pub verdict: Verdict,
    pub criteria: Vec<CriterionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyResult {
    pub proxy: String,
    pub rho_need: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub p_boot: Option<f64>,
    pub max_abs_gap: Option<f64>,
    pub proxy_is_outcome_label: bool,
    /// Point estimate at or above the E1 threshold.
    pub above_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquityDiagnostic {
    pub proxies: Vec<ProxyResult>,
    /// Proxies fall on both sides of the E1 threshold.
    pub cross_proxy_disagreement: bool,
    pub warnings: Vec<String>,
    pub criteria: Vec<CriterionResult>,
}

/// Equity as a diagnostic: per-proxy alignment with intervals, never a
/// gating verdict.
pub fn equity_diagnostic(
    reports: &[(EquityReport, Option<IntervalEstimate>)],
    criteria: &[SubCriterion],
    min_group_size: usize,
) -> Result<EquityDiagnostic> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("equity diagnostic needs at least one proxy".into()));
    }
    let e1 = find(criteria, CriterionId::E1)?;
    let e2 = find(criteria, CriterionId::E2)?;
    let mut proxies = Vec::new();
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for (report, est) in reports {
        let bounds = est.as_ref().and_then(IntervalEstimate::bounds);
        let p = est
            .as_ref()
            .filter(|e| !e.replicates.is_empty())
            .map(|e| directional_p(&e.replicates, report.rho_need, e1.threshold, e1.direction));
        let max_gap = report.max_abs_gap(min_group_size);
        if report.proxy_is_outcome_label {
            warnings.push(format!(
                "need proxy `{}` is the outcome label; alignment with it is circular",
                report.proxy
            ));
        }
        proxies.push(ProxyResult {
            proxy: report.proxy.clone(),
            rho_need: report.rho_need,
            ci_lo: bounds.map(|b| b.0),
            ci_hi: bounds.map(|b| b.1),
            p_boot: p,
            max_abs_gap: max_gap,
            proxy_is_outcome_label: report.proxy_is_outcome_label,
            above_threshold: report.rho_need >= e1.threshold,
        });
        rows.push(diagnostic_row(e1, Some(report.rho_need), bounds, p, &report.proxy));
        rows.push(diagnostic_row(e2, max_gap, None, None, &report.proxy));
    }
    let disagreement = proxies.iter().any(|p| p.above_threshold) && proxies.iter().any(|p| !p.above_threshold);
    if disagreement {
        warnings.push(format!(
            "need proxies disagree across the {} alignment threshold; equity conclusions depend on the proxy",
            e1.threshold
        ));
    }
    Ok(EquityDiagnostic {
        proxies,
        cross_proxy_disagreement: disagreement,
        warnings,
        criteria: rows,
    })
}

fn diagnostic_row(
    c: &SubCriterion,
    value: Option<f64>,
    bounds: Option<(f64, f64)>,
    p: Option<f64>,
    proxy: &str,
) -> CriterionResult {
    CriterionResult {
        id: c.id,
        dimension: c.id.dimension(),
        metric: c.metric.clone(),
        threshold: c.threshold,
        direction: c.direction,
        gating: false,
        ci_backed: c.ci_backed,
        value,
        ci_lo: bounds.map(|b| b.0),
        ci_hi: bounds.map(|b| b.1),
        p_boot: p,
        rule_verdict: None,
        verdict: Verdict::Diagnostic,
        reason: None,
        proxy: Some(proxy.to_string()),
        notes: Vec::new(),
    }
}

fn find(criteria: &[SubCriterion], id: CriterionId) -> Result<&SubCriterion> {
    criteria
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::IncompleteScorecard(format!("criterion {id} is not defined")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scorecard {
    pub dimensions: Vec<DimensionResult>,
    pub equity: Option<EquityDiagnostic>,
    pub holm: HolmFamily,
    pub gate: bool,
    pub warnings: Vec<String>,
}

impl Scorecard {
    pub fn criterion(&self, id: CriterionId) -> Option<&CriterionResult> {
        self.dimensions
            .iter()
            .flat_map(|d| &d.criteria)
            .chain(self.equity.iter().flat_map(|e| &e.criteria))
            .find(|c| c.id == id)
    }

    pub fn dimension(&self, d: Dimension) -> Option<&DimensionResult> {
        self.dimensions.iter().find(|r| r.dimension == d)
    }

    pub fn any_gating(&self, v: Verdict) -> bool {
        self.dimensions
            .iter()
            .filter(|d| d.dimension.gating())
            .flat_map(|d| &d.criteria)
            .any(|c| c.verdict == v)
    }
}

fn dimension_verdict(criteria: &[CriterionResult]) -> Verdict {
    if criteria.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if criteria.iter().any(|c| c.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

/// Builds the scorecard from evidence for all eight gating criteria.
///
/// Every gating criterion with a bootstrap distribution joins the Holm
/// family with its directional p-value; criteria with point evidence only
/// are exempt members. CI-backed criteria need the CI rule and the Holm
/// decision to agree, otherwise the verdict is INCONCLUSIVE. Point checks
/// keep their point verdict.
pub fn assemble_scorecard(
    inputs: &BTreeMap<CriterionId, CriterionInput>,
    criteria: &[SubCriterion],
    equity: Option<EquityDiagnostic>,
    holm_alpha: f64,
) -> Result<Scorecard> {
    let gating: Vec<&SubCriterion> = CriterionId::ALL
        .iter()
        .filter(|id| id.dimension().gating())
        .map(|&id| find(criteria, id))
        .collect::<Result<_>>()?;
    for c in &gating {
        if !inputs.contains_key(&c.id) {
            return Err(Error::IncompleteScorecard(format!(
                "gating criterion {} was neither evaluated nor skipped",
                c.id
            )));
        }
    }

    let mut tested = Vec::new();
    let mut exempt = Vec::new();
    let mut p_values = BTreeMap::new();
    for c in &gating {
        match &inputs[&c.id].evidence {
            Evidence::Estimate(e) if !e.replicates.is_empty() => {
                let p = directional_p(&e.replicates, e.point, c.threshold, c.direction);
                p_values.insert(c.id, p);
                tested.push((c.id.to_string(), p));
            }
            Evidence::Estimate(_) => exempt.push((c.id.to_string(), "no bootstrap replicates".to_string())),
            Evidence::Point { exempt_reason, .. } => exempt.push((c.id.to_string(), exempt_reason.clone())),
            Evidence::Skipped(reason) => exempt.push((c.id.to_string(), format!("not evaluated: {reason}"))),
        }
    }
    let holm = holm_with_exempt(&tested, &exempt, holm_alpha)?;

    let mut by_dim: BTreeMap<Dimension, Vec<CriterionResult>> = BTreeMap::new();
    for c in &gating {
        let input = &inputs[&c.id];
        let mut notes = Vec::new();
        let (value, bounds, rule) = match &input.evidence {
            Evidence::Estimate(e) => (Some(e.point), e.bounds(), classify(e, c)),
            Evidence::Point { value, .. } => (
                Some(*value),
                None,
                if c.ci_backed {
                    Classification::inconclusive(ReasonCode::DegenerateInterval)
                } else {
                    classify_point(*value, c.threshold, c.direction)
                },
            ),
            Evidence::Skipped(reason) => {
                notes.push(reason.clone());
                (None, None, Classification::inconclusive(ReasonCode::NotEvaluated))
            }
        };
        let mut fin = rule;
        if c.ci_backed && matches!(rule.verdict, Verdict::Pass | Verdict::Fail) {
            if holm.rejected(&c.id.to_string()) != Some(true) {
                fin = Classification::inconclusive(ReasonCode::HolmDisagreement);
            }
        }
        if let Some((n, floor)) = input.informative_floor {
            if n < floor {
                if fin.reason == Some(ReasonCode::CiBracketsThreshold) {
                    fin.reason = Some(ReasonCode::BelowInformativeFloor);
                }
                notes.push(format!("n = {n} is below the informative test size {floor}; directional only"));
            }
        }
        let is_interval = matches!(&input.evidence, Evidence::Estimate(_));
        by_dim.entry(c.id.dimension()).or_default().push(CriterionResult {
            id: c.id,
            dimension: c.id.dimension(),
            metric: c.metric.clone(),
            threshold: c.threshold,
            direction: c.direction,
            gating: true,
            ci_backed: c.ci_backed,
            value,
            ci_lo: bounds.filter(|_| is_interval).map(|b| b.0),
            ci_hi: bounds.filter(|_| is_interval).map(|b| b.1),
            p_boot: p_values.get(&c.id).copied(),
            rule_verdict: Some(rule.verdict),
            verdict: fin.verdict,
            reason: fin.reason,
            proxy: None,
            notes,
        });
    }

    let dimensions: Vec<DimensionResult> = by_dim
        .into_iter()
        .map(|(dimension, criteria)| DimensionResult {
            dimension,
            verdict: dimension_verdict(&criteria),
            criteria,
        })
        .collect();
    let gate = dimensions.iter().all(|d| d.verdict == Verdict::Pass);
    let mut warnings = Vec::new();
    if let Some(e) = &equity {
        warnings.extend(e.warnings.iter().cloned());
    }
    Ok(Scorecard {
        dimensions,
        equity,
        holm,
        gate,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::IntervalEstimate;

    fn est(point: f64, lo: f64, hi: f64) -> IntervalEstimate {
        IntervalEstimate {
            point,
            lo: Some(lo),
            hi: Some(hi),
            z0: Some(0.0),
            accel: Some(0.0),
            degenerate: false,
            point_mass: false,
            replicates_used: 0,
            discarded: 0,
            replicates: Vec::new(),
        }
    }

    fn crit(id: CriterionId) -> SubCriterion {
        default_criteria().into_iter().find(|c| c.id == id).unwrap()
    }

    #[test]
    fn reference_triples() {
        use CriterionId::*;
        assert_eq!(classify(&est(0.064, 0.058, 0.070), &crit(R1)).verdict, Verdict::Fail);
        assert_eq!(classify(&est(0.059, 0.042, 0.066), &crit(I1)).verdict, Verdict::Inconclusive);
        assert_eq!(classify(&est(0.0004, 0.0002, 0.0006), &crit(R1)).verdict, Verdict::Pass);
        assert_eq!(classify(&est(0.097, 0.078, 0.116), &crit(S1)).verdict, Verdict::Inconclusive);
        assert_eq!(classify(&est(0.73, 0.70, 0.76), &crit(E1)).verdict, Verdict::Diagnostic);
    }

    #[test]
    fn degenerate_ci_backed_is_inconclusive() {
        let mut e = est(0.02, 0.0, 0.0);
        e.lo = None;
        e.hi = None;
        e.degenerate = true;
        let c = classify(&e, &crit(CriterionId::R1));
        assert_eq!(c.reason, Some(ReasonCode::DegenerateInterval));
        e.point_mass = true;
        assert_eq!(classify(&e, &crit(CriterionId::R1)).verdict, Verdict::Pass);
    }

    #[test]
    fn point_checks_compare_the_point() {
        let c = crit(CriterionId::S2);
        assert_eq!(classify(&est(0.12, 0.0, 0.9), &c).verdict, Verdict::Pass);
        assert_eq!(classify(&est(0.2, 0.0, 0.9), &c).verdict, Verdict::Fail);
    }

    #[test]
    fn sweep_over_fixed_interval() {
        let v = threshold_sweep(0.058, 0.070, Direction::UpperBounded, &[0.025, 0.05, 0.075, 0.10]).unwrap();
        let got: Vec<Verdict> = v.iter().map(|x| x.1).collect();
        assert_eq!(got, vec![Verdict::Fail, Verdict::Fail, Verdict::Pass, Verdict::Pass]);
        assert_eq!(
            threshold_sweep(0.058, 0.070, Direction::UpperBounded, &[0.06]).unwrap()[0].1,
            Verdict::Inconclusive
        );
        assert!(threshold_sweep(0.0, 1.0, Direction::UpperBounded, &[]).is_err());
    }

    #[test]
    fn criterion_ids_parse() {
        assert_eq!("r1".parse::<CriterionId>().unwrap(), CriterionId::R1);
        assert!("Q9".parse::<CriterionId>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn widening_never_flips_pass_and_fail(
            lo in 0.0f64..1.0, w in 0.0f64..0.5, extra in 0.0f64..0.5, t in 0.0f64..1.0, upper in proptest::bool::ANY
        ) {
            let dir = if upper { Direction::UpperBounded } else { Direction::LowerBounded };
            let narrow = classify_interval(lo, lo + w, t, dir).verdict;
            let wide = classify_interval(lo - extra, lo + w + extra, t, dir).verdict;
            proptest::prop_assert!(wide == narrow || wide == Verdict::Inconclusive);
        }
    }
}

//! Runs every metric on a cohort, bootstraps the ones with intervals and
//! assembles the scorecard.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Partition};
use crate::error::{Error, Result};
use crate::explain::AttributionMatrix;
use crate::metrics::{
    boundary_width, default_sweep, equity_report, latency, pfr, spearman, subgroup_report, tfr_sweep,
    top3_consistency, top3_consistency_rows, DeployabilityReport, EquityReport, LatencyReport, SubgroupMetricReport,
    SubgroupOptions, TfrProfile, MIN_EVALUABLE_GROUP,
};
use crate::model::{ScoreSet, Scorer};
use crate::perturb::{noise_battery, PerturbationBattery};
use crate::stats::{
    bca_interval, min_test_size, BootstrapConfig, IntervalEstimate, MetricKind, Strata, MIN_BOOTSTRAP_ROWS,
};
use crate::verdict::{
    assemble_scorecard, default_criteria, equity_diagnostic, threshold_sweep, CriterionId, CriterionInput, Evidence,
    Scorecard, SubCriterion, Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "ms", rename_all = "snake_case")]
pub enum LatencyPolicy {
    /// Time the scorer after warm-up calls.
    Measure,
    /// Use a known value, e.g. for reproducible reports.
    Fixed(f64),
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub tau0: f64,
    pub boundary_delta: f64,
    pub ece_bins: usize,
    pub min_group_size: usize,
    pub sweep: Vec<f64>,
    pub bootstrap: BootstrapConfig,
    pub holm_alpha: f64,
    pub criteria: Vec<SubCriterion>,
    pub latency: LatencyPolicy,
    pub latency_repetitions: usize,
    pub latency_warmup: usize,
    /// Deviation and power behind the informative test-size floor.
    pub floor_deviation: f64,
    pub floor_power: f64,
    /// Replaces the scorer descriptor in reports.
    pub descriptor_override: Option<String>,
}

impl Default for EvaluationPlan {
    fn default() -> Self {
        EvaluationPlan {
            tau0: 0.5,
            boundary_delta: 0.05,
            ece_bins: 10,
            min_group_size: MIN_EVALUABLE_GROUP,
            sweep: default_sweep(),
            bootstrap: BootstrapConfig::default(),
            holm_alpha: 0.05,
            criteria: default_criteria(),
            latency: LatencyPolicy::Measure,
            latency_repetitions: 30,
            latency_warmup: 5,
            floor_deviation: 0.01,
            floor_power: 0.8,
            descriptor_override: None,
        }
    }
}

impl EvaluationPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return Err(Error::InvalidConfig(format!("tau0 {} must lie in (0, 1)", self.tau0)));
        }
        if !(self.boundary_delta > 0.0) {
            return Err(Error::InvalidConfig("boundary delta must be positive".into()));
        }
        if self.ece_bins == 0 {
            return Err(Error::InvalidConfig("ece_bins must be positive".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::InvalidConfig("threshold sweep is empty".into()));
        }
        if let LatencyPolicy::Fixed(ms) = self.latency {
            if !(ms >= 0.0 && ms.is_finite()) {
                return Err(Error::InvalidConfig(format!("fixed latency {ms} must be a non-negative number")));
            }
        }
        self.bootstrap.validate()
    }
}

pub enum Scoring<'a> {
    /// Score the cohort and every perturbed copy with this model.
    Model {
        scorer: &'a dyn Scorer,
        battery: &'a PerturbationBattery,
    },
    /// Scores computed elsewhere. When a battery is given, every one of its
    /// ids must have a perturbed column.
    Precomputed {
        scores: &'a ScoreSet,
        battery: Option<&'a PerturbationBattery>,
    },
}

/// Intermediate results behind the scorecard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDetails {
    pub pfr: BTreeMap<String, f64>,
    pub spearman: BTreeMap<String, f64>,
    pub tfr: TfrProfile,
    pub boundary_width: f64,
    pub subgroups: Vec<SubgroupMetricReport>,
    pub equity: Vec<EquityReport>,
    pub deployability: DeployabilityReport,
    /// Bootstrap estimates keyed by statistic name (`pss`, `pfr:<id>`, ...).
    pub estimates: BTreeMap<String, IntervalEstimate>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scorecard: Scorecard,
    pub details: EvaluationDetails,
    pub descriptor: String,
    pub battery_ids: Vec<String>,
    pub warnings: Vec<String>,
}

struct Scores {
    base: Vec<f64>,
    perturbed: Vec<(String, Vec<f64>)>,
}

fn gather(items: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| items[i]).collect()
}

fn gather_u8(items: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| items[i]).collect()
}

/// Bootstrap estimate, or a skipped criterion when the statistic is
/// undefined on the full cohort.
fn estimate<F>(strata: &Strata, stat: F, config: &BootstrapConfig) -> Result<std::result::Result<IntervalEstimate, String>>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    match bca_interval(strata, stat, config) {
        Ok(e) => Ok(Ok(e)),
        Err(Error::InvalidConfig(m)) => Ok(Err(m)),
        Err(e) => Err(e),
    }
}

fn evidence(r: &std::result::Result<IntervalEstimate, String>) -> Evidence {
    match r {
        Ok(e) => Evidence::Estimate(e.clone()),
        Err(m) => Evidence::Skipped(m.clone()),
    }
}

fn collect_scores(cohort: &Cohort, scoring: &Scoring<'_>) -> Result<(Scores, Vec<String>, Vec<String>)> {
    let mut notes = Vec::new();
    match scoring {
        Scoring::Model { scorer, battery } => {
            battery.validate()?;
            let base = scorer.score(&cohort.features)?.into_inner();
            let mut perturbed = Vec::new();
            for (spec, x) in battery.specs.iter().zip(battery.apply_all(&cohort.features)?) {
                perturbed.push((spec.id.clone(), scorer.score(&x)?.into_inner()));
            }
            notes.extend(battery.notes.iter().cloned());
            Ok((Scores { base, perturbed }, battery.ids(), notes))
        }
        Scoring::Precomputed { scores, battery } => {
            if scores.n_rows() != cohort.n_rows() {
                return Err(Error::Alignment(format!(
                    "score set has {} rows, cohort has {}",
                    scores.n_rows(),
                    cohort.n_rows()
                )));
            }
            let ids: Vec<String> = match battery {
                Some(b) => {
                    b.validate()?;
                    notes.extend(b.notes.iter().cloned());
                    for id in b.ids() {
                        if !scores.perturbed.contains_key(&id) {
                            return Err(Error::Plan(format!("score set has no column for perturbation `{id}`")));
                        }
                    }
                    b.ids()
                }
                None => scores.perturbed.keys().cloned().collect(),
            };
            let perturbed = ids
                .iter()
                .map(|id| (id.clone(), scores.perturbed[id].to_vec()))
                .collect();
            Ok((
                Scores {
                    base: scores.baseline.to_vec(),
                    perturbed,
                },
                ids,
                notes,
            ))
        }
    }
}

fn is_label_copy(proxy: &[f64], labels: &[u8]) -> bool {
    proxy.iter().zip(labels).all(|(p, &l)| *p == f64::from(l))
}

/// Runs the full audit.
pub fn evaluate_all(
    cohort: &Cohort,
    scoring: Scoring<'_>,
    attributions: Option<&AttributionMatrix>,
    plan: &EvaluationPlan,
) -> Result<Evaluation> {
    plan.validate()?;
    let n = cohort.n_rows();
    if n < MIN_BOOTSTRAP_ROWS {
        return Err(Error::TooSmall {
            n,
            min: MIN_BOOTSTRAP_ROWS,
        });
    }
    if let Some(a) = attributions {
        if a.n_rows() != n {
            return Err(Error::Alignment(format!("{} attribution rows for {n} cohort rows", a.n_rows())));
        }
    }

    // Latency first, while nothing else is running.
    let mut warnings = Vec::new();
    let (latency_report, latency_evidence) = match (&plan.latency, &scoring) {
        (LatencyPolicy::Measure, Scoring::Model { scorer, .. }) => {
            let r = latency(*scorer, &cohort.features, plan.latency_repetitions, plan.latency_warmup)?;
            let ev = Evidence::Point {
                value: r.cohort_ms,
                exempt_reason: "hardware-bound latency; measured outside the bootstrap".into(),
            };
            (Some(r), ev)
        }
        (LatencyPolicy::Measure, Scoring::Precomputed { .. }) => (
            None,
            Evidence::Skipped("latency cannot be measured from precomputed scores".into()),
        ),
        (LatencyPolicy::Fixed(ms), _) => (
            Some(LatencyReport {
                cohort_ms: *ms,
                per_patient_ms: *ms / n as f64,
                repetitions: 0,
                warmup: 0,
                n_rows: n,
            }),
            Evidence::Point {
                value: *ms,
                exempt_reason: "hardware-bound latency; supplied value".into(),
            },
        ),
        (LatencyPolicy::Skip, _) => (None, Evidence::Skipped("latency measurement disabled".into())),
    };

    let descriptor = plan.descriptor_override.clone().unwrap_or_else(|| match &scoring {
        Scoring::Model { scorer, .. } => scorer.descriptor(),
        Scoring::Precomputed { .. } => "precomputed-scores".to_string(),
    });
    let (scores, battery_ids, notes) = collect_scores(cohort, &scoring)?;
    warnings.extend(notes);

    let labels = &cohort.labels;
    let strata = if plan.bootstrap.stratify_by_label {
        Strata::by_label(labels)
    } else {
        Strata::none(n)
    };
    let cfg = &plan.bootstrap;
    let tau0 = plan.tau0;
    let base = &scores.base;
    let mut estimates = BTreeMap::new();
    let mut inputs: BTreeMap<CriterionId, CriterionInput> = BTreeMap::new();

    // Reliability.
    let mut pfr_points = BTreeMap::new();
    let mut rho_points = BTreeMap::new();
    for (id, p) in &scores.perturbed {
        pfr_points.insert(id.clone(), pfr(base, p, tau0)?);
        if let Ok(r) = spearman(base, p) {
            rho_points.insert(id.clone(), r);
        }
        if let Ok(e) = estimate(&strata, |idx| pfr(&gather(base, idx), &gather(p, idx), tau0).ok(), cfg)? {
            estimates.insert(format!("pfr:{id}"), e);
        }
    }
    let pss_floor = min_test_size(
        MetricKind::Pss,
        MetricKind::Pss.default_base_rate(),
        plan.floor_deviation,
        plan.floor_power,
        plan.holm_alpha,
    )?;
    if scores.perturbed.is_empty() {
        let why = "no perturbed scores supplied".to_string();
        inputs.insert(CriterionId::R1, CriterionInput::new(Evidence::Skipped(why.clone())));
        inputs.insert(CriterionId::R2, CriterionInput::new(Evidence::Skipped(why)));
    } else {
        let pert = &scores.perturbed;
        let pss_est = estimate(
            &strata,
            |idx| {
                let b = gather(base, idx);
                let total: f64 = pert.iter().map(|(_, p)| pfr(&b, &gather(p, idx), tau0).unwrap_or(0.0)).sum();
                Some(total / pert.len() as f64)
            },
            cfg,
        )?;
        let rho_est = estimate(
            &strata,
            |idx| {
                let b = gather(base, idx);
                pert.iter()
                    .map(|(_, p)| spearman(&b, &gather(p, idx)).ok())
                    .try_fold(f64::INFINITY, |m, r| r.map(|r| m.min(r)))
            },
            cfg,
        )?;
        inputs.insert(
            CriterionId::R1,
            CriterionInput {
                evidence: evidence(&pss_est),
                informative_floor: Some((n, pss_floor)),
            },
        );
        inputs.insert(CriterionId::R2, CriterionInput::new(evidence(&rho_est)));
        if let Ok(e) = pss_est {
            estimates.insert("pss".into(), e);
        }
        if let Ok(e) = rho_est {
            estimates.insert("min_spearman".into(), e);
        }
    }

    // Inclusivity: attributes with at least one evaluable group.
    let sg_opts = SubgroupOptions {
        ece_bins: plan.ece_bins,
        min_group_size: plan.min_group_size,
        selection_threshold: Some(tau0),
    };
    let mut subgroups = Vec::new();
    let mut attrs: Vec<(&str, &Partition)> = Vec::new();
    for (name, part) in &cohort.subgroups {
        match subgroup_report(name, base, labels, part, &sg_opts) {
            Ok(r) => {
                if !r.small_groups.is_empty() {
                    warnings.push(format!(
                        "{name}: groups below n = {} excluded from gaps: {}",
                        plan.min_group_size,
                        r.small_groups.join(", ")
                    ));
                }
                subgroups.push(r);
                attrs.push((name.as_str(), part));
            }
            Err(Error::NoEvaluableGroups(a)) => warnings.push(format!("{a}: no evaluable subgroups; attribute skipped")),
            Err(e) => return Err(e),
        }
    }
    if attrs.is_empty() {
        let why = "no subgroup attribute with an evaluable group".to_string();
        inputs.insert(CriterionId::I1, CriterionInput::new(Evidence::Skipped(why.clone())));
        inputs.insert(CriterionId::I2, CriterionInput::new(Evidence::Skipped(why)));
    } else {
        let sub_stat = |idx: &[usize], pick: fn(&SubgroupMetricReport) -> f64| -> Option<f64> {
            let s = gather(base, idx);
            let y = gather_u8(labels, idx);
            let mut best: Option<f64> = None;
            for (name, part) in &attrs {
                let p = part.select_rows(idx);
                if let Ok(r) = subgroup_report(name, &s, &y, &p, &sg_opts) {
                    let v = pick(&r);
                    best = Some(best.map_or(v, |b| b.max(v)));
                }
            }
            best
        };
        let gap = estimate(&strata, |idx| sub_stat(idx, |r| r.auc_gap), cfg)?;
        let ece = estimate(&strata, |idx| sub_stat(idx, |r| r.max_ece), cfg)?;
        inputs.insert(CriterionId::I1, CriterionInput::new(evidence(&gap)));
        inputs.insert(CriterionId::I2, CriterionInput::new(evidence(&ece)));
        if let Ok(e) = gap {
            estimates.insert("auc_gap".into(), e);
        }
        if let Ok(e) = ece {
            estimates.insert("max_ece".into(), e);
        }
    }

    // Sensitivity.
    let sweep = &plan.sweep;
    let profile = tfr_sweep(base, tau0, sweep)?;
    let width = boundary_width(base, tau0, plan.boundary_delta)?;
    let tfr_est = estimate(&strata, |idx| tfr_sweep(&gather(base, idx), tau0, sweep).ok().map(|p| p.max_tfr), cfg)?;
    let delta = plan.boundary_delta;
    let w_est = estimate(&strata, |idx| boundary_width(&gather(base, idx), tau0, delta).ok(), cfg)?;
    let tfr_floor = min_test_size(
        MetricKind::MaxTfr,
        MetricKind::MaxTfr.default_base_rate(),
        plan.floor_deviation,
        plan.floor_power,
        plan.holm_alpha,
    )?;
    inputs.insert(
        CriterionId::S1,
        CriterionInput {
            evidence: evidence(&tfr_est),
            informative_floor: Some((n, tfr_floor)),
        },
    );
    inputs.insert(CriterionId::S2, CriterionInput::new(evidence(&w_est)));
    if let Ok(e) = tfr_est {
        estimates.insert("max_tfr".into(), e);
    }
    if let Ok(e) = w_est {
        estimates.insert("boundary_width".into(), e);
    }

    // Equity (diagnostic only).
    let mut equity_reports = Vec::new();
    let mut equity_inputs = Vec::new();
    for (name, proxy) in &cohort.need_proxies {
        let is_label = is_label_copy(proxy, labels);
        let report = match equity_report(name, base, proxy, &attrs, is_label) {
            Ok(r) => r,
            Err(e @ (Error::UndefinedCorrelation(_) | Error::Range(_))) => {
                warnings.push(format!("need proxy `{name}` skipped: {e}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let est = estimate(&strata, |idx| spearman(&gather(base, idx), &gather(proxy, idx)).ok(), cfg)?.ok();
        if let Some(e) = &est {
            estimates.insert(format!("rho_need:{name}"), e.clone());
        }
        equity_inputs.push((report.clone(), est));
        equity_reports.push(report);
    }
    let equity = if equity_inputs.is_empty() {
        warnings.push("no usable need proxy: equity diagnostic omitted".into());
        None
    } else {
        Some(equity_diagnostic(&equity_inputs, &plan.criteria, plan.min_group_size)?)
    };

    // Deployability.
    inputs.insert(CriterionId::D1, CriterionInput::new(latency_evidence));
    let mut top3 = None;
    let d2 = match attributions {
        Some(a) if a.n_cols() >= 3 => {
            top3 = Some(top3_consistency(a)?);
            let d = a.n_cols();
            let values = a.values();
            let est = estimate(&strata, |idx| top3_consistency_rows(values, d, idx).ok().map(|t| t.0), cfg)?;
            if let Ok(e) = &est {
                estimates.insert("f_top3".into(), e.clone());
            }
            evidence(&est)
        }
        Some(a) => Evidence::Skipped(format!("only {} attributed features; need 3", a.n_cols())),
        None => Evidence::Skipped("no attributions supplied".into()),
    };
    inputs.insert(CriterionId::D2, CriterionInput::new(d2));

    let scorecard = assemble_scorecard(&inputs, &plan.criteria, equity, plan.holm_alpha)?;
    warnings.extend(scorecard.warnings.iter().cloned());
    let details = EvaluationDetails {
        pfr: pfr_points,
        spearman: rho_points,
        tfr: profile,
        boundary_width: width,
        subgroups,
        equity: equity_reports,
        deployability: DeployabilityReport {
            latency: latency_report,
            top3,
            attribution_provider: attributions.map(|a| format!("{:?}", a.provider())),
        },
        estimates,
    };
    Ok(Evaluation {
        scorecard,
        details,
        descriptor,
        battery_ids,
        warnings,
    })
}

/// Verdicts for one CI-backed criterion of a finished scorecard at
/// alternative thresholds. Holm is not re-run.
pub fn threshold_sensitivity_sweep(
    scorecard: &Scorecard,
    id: CriterionId,
    thresholds: &[f64],
) -> Result<Vec<(f64, Verdict)>> {
    let c = scorecard
        .criterion(id)
        .ok_or_else(|| Error::InvalidConfig(format!("criterion {id} not in scorecard")))?;
    match (c.ci_lo, c.ci_hi) {
        (Some(lo), Some(hi)) => threshold_sweep(lo, hi, c.direction, thresholds),
        _ => Err(Error::InvalidConfig(format!("criterion {id} has no interval to sweep"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub sigmas: Vec<f64>,
    pub pss: Vec<f64>,
    pub tolerance: f64,
    pub monotone: bool,
}

pub const MONOTONICITY_TOLERANCE: f64 = 0.002;

/// Flip rate at each noise level (over all continuous columns); expected to
/// be non-decreasing in sigma up to `MONOTONICITY_TOLERANCE`.
pub fn pss_monotonicity_check(
    cohort: &Cohort,
    scorer: &dyn Scorer,
    sigmas: &[f64],
    tau0: f64,
    master_seed: u64,
) -> Result<MonotonicityReport> {
    if sigmas.is_empty() {
        return Err(Error::InvalidConfig("no noise levels given".into()));
    }
    if sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("noise levels must be non-decreasing".into()));
    }
    let battery = noise_battery(sigmas, master_seed)?;
    let base = scorer.score(&cohort.features)?;
    let mut pss = Vec::with_capacity(sigmas.len());
    for x in battery.apply_all(&cohort.features)? {
        pss.push(pfr(&base, &scorer.score(&x)?, tau0)?);
    }
    let monotone = pss.windows(2).all(|w| w[1] >= w[0] - MONOTONICITY_TOLERANCE);
    Ok(MonotonicityReport {
        sigmas: sigmas.to_vec(),
        pss,
        tolerance: MONOTONICITY_TOLERANCE,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic, CohortGenConfig};
    use crate::explain::linear_attributions;
    use crate::model::{fit_logistic, FitConfig};
    use crate::perturb::default_battery;

    fn small_plan() -> EvaluationPlan {
        EvaluationPlan {
            bootstrap: BootstrapConfig {
                replicates: 200,
                ..BootstrapConfig::default()
            },
            latency: LatencyPolicy::Fixed(1.0),
            ..EvaluationPlan::default()
        }
    }

    fn cohort(n: usize) -> Cohort {
        generate_synthetic(&CohortGenConfig {
            n,
            ..CohortGenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn full_run_is_complete_and_deterministic() {
        let c = cohort(1200);
        let model = fit_logistic(&c, &FitConfig::default()).unwrap();
        let battery = default_battery(&c.features, &["bmi".into()], "age", 7).unwrap();
        let attr = linear_attributions(&model, &c.features).unwrap();
        let run = || {
            evaluate_all(
                &c,
                Scoring::Model {
                    scorer: &model,
                    battery: &battery,
                },
                Some(&attr),
                &small_plan(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.scorecard, b.scorecard);
        for id in CriterionId::ALL {
            if id.dimension().gating() {
                assert!(a.scorecard.criterion(id).is_some(), "{id} missing");
            }
        }
        assert_eq!(a.scorecard.holm.m, 8);
        assert_eq!(a.scorecard.holm.entries.last().unwrap().id, "D1");
    }

    #[test]
    fn precomputed_missing_battery_id() {
        let c = cohort(200);
        let model = fit_logistic(&c, &FitConfig::default()).unwrap();
        let battery = default_battery(&c.features, &["bmi".into()], "age", 7).unwrap();
        let set = ScoreSet {
            baseline: model.score(&c.features).unwrap(),
            perturbed: BTreeMap::new(),
        };
        let err = evaluate_all(
            &c,
            Scoring::Precomputed {
                scores: &set,
                battery: Some(&battery),
            },
            None,
            &small_plan(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Plan(_)));
    }

    #[test]
    fn tiny_cohort_rejected() {
        let c = cohort(200).select_rows(&(0..8).collect::<Vec<_>>());
        let set = ScoreSet {
            baseline: crate::metrics::ScoreVector::new(vec![0.5; 8]).unwrap(),
            perturbed: BTreeMap::new(),
        };
        let err = evaluate_all(&c, Scoring::Precomputed { scores: &set, battery: None }, None, &small_plan());
        assert!(matches!(err, Err(Error::TooSmall { n: 8, .. })));
    }
}

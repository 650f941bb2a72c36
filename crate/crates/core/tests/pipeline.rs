use std::collections::BTreeMap;

use proptest::prelude::*;

use predeploy_core::cohort::{generate_synthetic, load_cohort_csv, stratified_split, write_cohort_csv, CohortGenConfig};
use predeploy_core::explain::{linear_attributions, load_attributions_csv, write_attributions_csv};
use predeploy_core::model::{fit_logistic, load_score_set, write_score_set, FitConfig, ScoreSet};
use predeploy_core::perturb::{default_battery, noise_battery, PerturbationBattery};
use predeploy_core::report::{build_document, exit_code, render_text, ScorecardDocument, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_PASS};
use predeploy_core::runner::{evaluate_all, threshold_sensitivity_sweep, EvaluationPlan, LatencyPolicy, Scoring};
use predeploy_core::stats::{BootstrapConfig, IntervalEstimate};
use predeploy_core::verdict::{
    assemble_scorecard, default_criteria, CriterionId, CriterionInput, Dimension, Evidence, ReasonCode, Verdict,
};
use predeploy_core::{Cohort, LogisticBaseline, Scorer};

fn quick_plan() -> EvaluationPlan {
    EvaluationPlan {
        bootstrap: BootstrapConfig {
            replicates: 200,
            ..BootstrapConfig::default()
        },
        latency: LatencyPolicy::Fixed(2.0),
        ..EvaluationPlan::default()
    }
}

fn fitted(n: usize) -> (Cohort, LogisticBaseline) {
    let cohort = generate_synthetic(&CohortGenConfig {
        n,
        seed: 3,
        ..CohortGenConfig::default()
    })
    .unwrap();
    let (train, test) = stratified_split(&cohort, 0.4, 3).unwrap();
    (test, fit_logistic(&train, &FitConfig::default()).unwrap())
}

#[test]
fn zero_noise_battery_passes_reliability() {
    let (test, model) = fitted(1500);
    let battery = noise_battery(&[0.0], 9).unwrap();
    let ev = evaluate_all(&test, Scoring::Model { scorer: &model, battery: &battery }, None, &quick_plan()).unwrap();
    let r = ev.scorecard.dimension(Dimension::Reliability).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
    assert_eq!(ev.scorecard.criterion(CriterionId::R1).unwrap().value, Some(0.0));
    // Without attributions D2 is not evaluated, so the gate cannot pass.
    let d2 = ev.scorecard.criterion(CriterionId::D2).unwrap();
    assert_eq!(d2.reason, Some(ReasonCode::NotEvaluated));
    assert!(!ev.scorecard.gate);
}

#[test]
fn files_round_trip_through_score_set_mode() {
    let (test, model) = fitted(1000);
    let dir = tempfile::tempdir().unwrap();
    let schema = write_cohort_csv(&test, &dir.path().join("cohort.csv")).unwrap();
    let loaded = load_cohort_csv(&dir.path().join("cohort.csv"), &schema).unwrap();
    assert_eq!(loaded.dropped, 0);
    assert_eq!(loaded.cohort.labels, test.labels);
    assert_eq!(loaded.content_hash.len(), 64);

    let battery = default_battery(&test.features, &["bmi".into(), "systolic_bp".into()], "age", 5).unwrap();
    let mut perturbed = BTreeMap::new();
    for (spec, x) in battery.specs.iter().zip(battery.apply_all(&test.features).unwrap()) {
        perturbed.insert(spec.id.clone(), model.score(&x).unwrap());
    }
    let set = ScoreSet {
        baseline: model.score(&test.features).unwrap(),
        perturbed,
    };
    write_score_set(&dir.path().join("scores.csv"), &test.row_ids, &set, None).unwrap();
    let attr = linear_attributions(&model, &test.features).unwrap();
    write_attributions_csv(&dir.path().join("attr.csv"), &test.row_ids, &attr).unwrap();

    let cohort = loaded.cohort;
    let scores = load_score_set(&dir.path().join("scores.csv"), &cohort).unwrap();
    let attr2 = load_attributions_csv(&dir.path().join("attr.csv"), &cohort.row_ids).unwrap();
    let plan = quick_plan();
    let ev = evaluate_all(
        &cohort,
        Scoring::Precomputed {
            scores: &scores,
            battery: Some(&battery),
        },
        Some(&attr2),
        &plan,
    )
    .unwrap();
    let doc = build_document(&ev, &plan, &cohort, Some(loaded.content_hash.clone()));
    let json = doc.to_json().unwrap();
    let back = ScorecardDocument::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
    assert_eq!(back.gate.exit_code, exit_code(&ev.scorecard));
    assert!(render_text(&doc).contains("DEPLOYMENT GATE"));

    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value["surprise"] = serde_json::json!(1);
    assert!(ScorecardDocument::from_json(&value.to_string()).is_err());
}

#[test]
fn missing_battery_column_is_a_plan_error() {
    let (test, model) = fitted(400);
    let battery = PerturbationBattery::from_toml(
        r#"
master_seed = 1
[[spec]]
id = "n1"
kind = "gaussian_noise"
sigma = 0.1
seed_offset = 1
"#,
    )
    .unwrap();
    let set = ScoreSet {
        baseline: model.score(&test.features).unwrap(),
        perturbed: BTreeMap::new(),
    };
    let err = evaluate_all(&test, Scoring::Precomputed { scores: &set, battery: Some(&battery) }, None, &quick_plan());
    assert!(matches!(err, Err(predeploy_core::Error::Plan(_))));
}

#[test]
fn sweep_reuses_the_interval() {
    let (test, model) = fitted(1000);
    let battery = default_battery(&test.features, &["bmi".into()], "age", 5).unwrap();
    let ev = evaluate_all(&test, Scoring::Model { scorer: &model, battery: &battery }, None, &quick_plan()).unwrap();
    let s1 = ev.scorecard.criterion(CriterionId::S1).unwrap();
    let (lo, hi) = (s1.ci_lo.unwrap(), s1.ci_hi.unwrap());
    let out = threshold_sensitivity_sweep(&ev.scorecard, CriterionId::S1, &[lo / 2.0, (lo + hi) / 2.0, hi * 2.0]).unwrap();
    let v: Vec<Verdict> = out.iter().map(|x| x.1).collect();
    assert_eq!(v, vec![Verdict::Fail, Verdict::Inconclusive, Verdict::Pass]);
    assert!(threshold_sensitivity_sweep(&ev.scorecard, CriterionId::D1, &[1.0]).is_err());
}

fn synthetic_estimate(point: f64, spread: f64, seed: u64) -> IntervalEstimate {
    let reps: Vec<f64> = (0..400)
        .map(|i| point + spread * (((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5))
        .collect();
    let mut sorted = reps.clone();
    sorted.sort_by(f64::total_cmp);
    IntervalEstimate {
        point,
        lo: Some(sorted[10].min(point)),
        hi: Some(sorted[389].max(point)),
        z0: Some(0.0),
        accel: Some(0.0),
        degenerate: false,
        point_mass: false,
        replicates_used: reps.len(),
        discarded: 0,
        replicates: reps,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Gate, dimension verdicts and exit code stay consistent for arbitrary
    // evidence, and Holm rejections are monotone in every scorecard.
    #[test]
    fn assembled_scorecards_are_consistent(
        points in prop::collection::vec(0.0f64..1.0, 7),
        spreads in prop::collection::vec(0.0f64..0.3, 7),
        latency in 0.0f64..1000.0,
    ) {
        let ids = [CriterionId::R1, CriterionId::R2, CriterionId::I1, CriterionId::I2, CriterionId::S1, CriterionId::S2, CriterionId::D2];
        let mut inputs = BTreeMap::new();
        for (k, id) in ids.iter().enumerate() {
            inputs.insert(*id, CriterionInput::new(Evidence::Estimate(synthetic_estimate(points[k], spreads[k], k as u64))));
        }
        inputs.insert(CriterionId::D1, CriterionInput::new(Evidence::Point { value: latency, exempt_reason: "timed".into() }));
        let sc = assemble_scorecard(&inputs, &default_criteria(), None, 0.05).unwrap();

        let mut seen_accept = false;
        for e in sc.holm.entries.iter().filter(|e| e.p.is_some()) {
            prop_assert!(!(seen_accept && e.rejected));
            seen_accept |= !e.rejected;
        }
        for d in &sc.dimensions {
            let vs: Vec<Verdict> = d.criteria.iter().map(|c| c.verdict).collect();
            let want = if vs.contains(&Verdict::Fail) { Verdict::Fail }
                else if vs.contains(&Verdict::Inconclusive) { Verdict::Inconclusive }
                else { Verdict::Pass };
            prop_assert_eq!(d.verdict, want);
            for c in &d.criteria {
                // A CI-backed PASS or FAIL always agrees with the raw CI rule.
                if c.ci_backed && c.verdict != Verdict::Inconclusive {
                    prop_assert_eq!(Some(c.verdict), c.rule_verdict);
                }
            }
        }
        prop_assert_eq!(sc.gate, sc.dimensions.iter().all(|d| d.verdict == Verdict::Pass));
        let code = exit_code(&sc);
        prop_assert!(code == EXIT_PASS || code == EXIT_FAIL || code == EXIT_INCONCLUSIVE);
        prop_assert_eq!(code == EXIT_PASS, sc.gate);
        prop_assert_eq!(code == EXIT_FAIL, sc.any_gating(Verdict::Fail));
    }
}

#[test]
fn missing_gating_criterion_is_incomplete() {
    let mut inputs = BTreeMap::new();
    inputs.insert(CriterionId::R1, CriterionInput::new(Evidence::Skipped("x".into())));
    let err = assemble_scorecard(&inputs, &default_criteria(), None, 0.05).unwrap_err();
    assert!(matches!(err, predeploy_core::Error::IncompleteScorecard(_)));
}

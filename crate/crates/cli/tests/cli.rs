use std::path::Path;
use std::process::{Command, Output};

use predeploy_core::report::ScorecardDocument;

fn predeploy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predeploy"))
        .args(args)
        .env_remove("PREDEPLOY_SEED")
        .output()
        .expect("run predeploy")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cohort(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let csv = dir.join("cohort.csv");
    let out = predeploy(&["generate-cohort", "--n", &n.to_string(), "--seed", "9", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (csv, dir.join("cohort.schema.csv"))
}

#[test]
fn evaluate_writes_scorecard_and_exit_code_matches_gate() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = cohort(dir.path(), 1500);
    let json = dir.path().join("card.json");
    let args = [
        "evaluate",
        "--cohort",
        s(&csv),
        "--schema",
        s(&schema),
        "--replicates",
        "200",
        "--latency-ms",
        "3",
        "--json",
        s(&json),
    ];
    let out = predeploy(&args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("DEPLOYMENT GATE"), "{stdout}");
    let text = std::fs::read_to_string(&json).unwrap();
    let doc = ScorecardDocument::from_json(&text).unwrap();
    assert_eq!(out.status.code(), Some(doc.gate.exit_code));
    assert!([0, 1, 3].contains(&doc.gate.exit_code));
    assert_eq!(doc.config.bootstrap.replicates, 200);
    assert_eq!(doc.holm.m, 8);

    // Same inputs, same bytes.
    let first = text;
    predeploy(&args);
    assert_eq!(std::fs::read_to_string(&json).unwrap(), first);

    let sweep = predeploy(&["sweep", "--scorecard", s(&json), "--criterion", "S1", "--thresholds", "0.0001,0.99"]);
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let lines = String::from_utf8(sweep.stdout).unwrap();
    let verdicts: Vec<&str> = lines.lines().map(|l| l.split('\t').nth(2).unwrap()).collect();
    assert_eq!(verdicts, vec!["FAIL", "PASS"]);
}

#[test]
fn seed_from_environment_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(predeploy(&["generate-cohort", "--n", "200", "--seed", "5", "--out", s(&a)]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_predeploy"))
        .args(["generate-cohort", "--n", "200", "--out", s(&b)])
        .env("PREDEPLOY_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn score_set_mode_with_battery_and_attributions() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = cohort(dir.path(), 300);
    let ids: Vec<String> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let mut scores = String::from("id,score,score@shift\n");
    let mut attr = String::from("id,a,b,c,d\n");
    for (i, id) in ids.iter().enumerate() {
        let v = (i % 97) as f64 / 97.0;
        scores.push_str(&format!("{id},{v},{}\n", (v + 0.01).min(1.0)));
        attr.push_str(&format!("{id},{},0.5,0.1,0.01\n", 1.0 + v));
    }
    std::fs::write(dir.path().join("scores.csv"), scores).unwrap();
    std::fs::write(dir.path().join("attr.csv"), attr).unwrap();
    std::fs::write(
        dir.path().join("battery.toml"),
        "master_seed = 1\n\n[[spec]]\nid = \"shift\"\nkind = \"column_rescale\"\ncolumn = \"age\"\nfactor = 1.05\nseed_offset = 1\n",
    )
    .unwrap();
    let json = dir.path().join("card.json");
    let out = predeploy(&[
        "evaluate",
        "--cohort",
        s(&csv),
        "--schema",
        s(&schema),
        "--scores",
        s(&dir.path().join("scores.csv")),
        "--battery",
        s(&dir.path().join("battery.toml")),
        "--attributions",
        s(&dir.path().join("attr.csv")),
        "--replicates",
        "100",
        "--quiet",
        "--json",
        s(&json),
    ]);
    assert!(out.stdout.is_empty());
    let doc = ScorecardDocument::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(out.status.code(), Some(doc.gate.exit_code));
    assert_eq!(doc.model, "precomputed-scores");
    assert_eq!(doc.config.battery, vec!["shift".to_string()]);
    let d2 = doc.dimensions.iter().flat_map(|d| &d.criteria).find(|c| c.id.to_string() == "D2").unwrap();
    assert_eq!(d2.value, Some(1.0));
    // Latency cannot be timed from a score file.
    let d1 = doc.dimensions.iter().flat_map(|d| &d.criteria).find(|c| c.id.to_string() == "D1").unwrap();
    assert_eq!(d1.value, None);
    assert_eq!(doc.gate.exit_code, if doc.dimensions.iter().any(|d| d.verdict.to_string() == "FAIL") { 1 } else { 3 });
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = cohort(dir.path(), 200);
    let bad_threshold = predeploy(&[
        "evaluate",
        "--cohort",
        s(&csv),
        "--schema",
        s(&schema),
        "--threshold",
        "Q7=0.1",
    ]);
    assert_eq!(bad_threshold.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_threshold.stderr).contains("unknown criterion"));

    let missing = predeploy(&["evaluate", "--cohort", "/nonexistent.csv", "--schema", s(&schema)]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(predeploy(&["evaluate", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        predeploy(&["evaluate", "--cohort", s(&csv), "--schema", s(&schema), "--replicates", "10"]).status.code(),
        Some(2)
    );
}

#[test]
fn coverage_reports_fraction() {
    let out = predeploy(&["coverage", "--n", "50", "--trials", "100", "--replicates", "200"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let json_line = text.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(json_line).unwrap();
    assert_eq!(v["trials"], 100);
    let c = v["coverage"].as_f64().unwrap();
    assert!((0.8..=1.0).contains(&c), "{c}");
}

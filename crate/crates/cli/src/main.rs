use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use predeploy_core::cohort::{
    generate_synthetic, load_cohort_csv, stratified_split, write_cohort_csv, CohortGenConfig, CohortSchema, ColumnKind,
};
use predeploy_core::explain::{linear_attributions, load_attributions_csv};
use predeploy_core::model::{fit_logistic, load_score_set, FitConfig};
use predeploy_core::perturb::{default_battery, PerturbationBattery};
use predeploy_core::report::{build_document, render_text, ScorecardDocument, EXIT_USAGE};
use predeploy_core::runner::{evaluate_all, threshold_sensitivity_sweep, EvaluationPlan, LatencyPolicy, Scoring};
use predeploy_core::stats::{normal_mean_coverage, BootstrapConfig, IntervalMethod};
use predeploy_core::verdict::{criteria_with_overrides, CriterionId};
use predeploy_core::{Error, Result};

#[derive(Parser)]
#[command(name = "predeploy", version, about = "Pre-deployment audit of binary risk classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort and its schema.
    GenerateCohort(GenerateArgs),
    /// Audit a model (built-in baseline or precomputed scores) on a cohort.
    Evaluate(EvaluateArgs),
    /// Re-classify one criterion of a saved scorecard at other thresholds.
    Sweep(SweepArgs),
    /// Empirical coverage of the bootstrap interval on normal means.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, env = "PREDEPLOY_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.30)]
    positive_fraction: f64,
    /// Cohort CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Schema CSV to write; defaults to `<out>.schema.csv`.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Precomputed scores (`id,score,score@<perturbation>...`). Without it the
    /// built-in logistic baseline is fitted on a training split.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Perturbation battery (TOML).
    #[arg(long)]
    battery: Option<PathBuf>,
    /// Attributions CSV (`id,<feature>...`) for precomputed scores.
    #[arg(long)]
    attributions: Option<PathBuf>,
    /// Use this latency (ms) instead of timing the model.
    #[arg(long)]
    latency_ms: Option<f64>,
    #[arg(long, conflicts_with = "latency_ms")]
    no_latency: bool,
    /// Fraction held out for evaluation when fitting the baseline.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, env = "PREDEPLOY_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.5)]
    tau0: f64,
    #[arg(long, default_value_t = 0.05)]
    boundary_delta: f64,
    #[arg(long, default_value_t = 10)]
    ece_bins: usize,
    /// Threshold override, e.g. `R1=0.04`. Repeatable.
    #[arg(long = "threshold", value_name = "ID=VALUE")]
    thresholds: Vec<String>,
    /// Percentile intervals instead of BCa.
    #[arg(long)]
    percentile: bool,
    /// Replace the model descriptor in the report.
    #[arg(long)]
    descriptor: Option<String>,
    /// Write the JSON scorecard here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Do not print the text table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON scorecard written by `evaluate`.
    #[arg(long)]
    scorecard: PathBuf,
    #[arg(long)]
    criterion: String,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    thresholds: Vec<f64>,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, env = "PREDEPLOY_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    percentile: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateCohort(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Coverage(a) => coverage(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

fn generate(a: GenerateArgs) -> Result<i32> {
    let cohort = generate_synthetic(&CohortGenConfig {
        n: a.n,
        seed: a.seed,
        positive_fraction: a.positive_fraction,
        ..CohortGenConfig::default()
    })?;
    let schema = write_cohort_csv(&cohort, &a.out)?;
    let schema_path = a.schema.unwrap_or_else(|| sibling(&a.out, "schema.csv"));
    schema.write(&schema_path)?;
    eprintln!(
        "wrote {} rows ({} positive) to {} and schema to {}",
        cohort.n_rows(),
        cohort.n_positive(),
        a.out.display(),
        schema_path.display()
    );
    Ok(0)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn parse_overrides(raw: &[String]) -> Result<BTreeMap<CriterionId, f64>> {
    raw.iter()
        .map(|s| {
            let (id, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("threshold `{s}` is not ID=VALUE")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("threshold `{s}` has a non-numeric value")))?;
            Ok((id.parse()?, v))
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<i32> {
    let schema = CohortSchema::load(&a.schema)?;
    let loaded = load_cohort_csv(&a.cohort, &schema)?;
    if loaded.dropped > 0 {
        eprintln!("note: {} rows with missing required values dropped", loaded.dropped);
    }
    let battery = a.battery.as_deref().map(PerturbationBattery::load).transpose()?;
    let plan = EvaluationPlan {
        tau0: a.tau0,
        boundary_delta: a.boundary_delta,
        ece_bins: a.ece_bins,
        bootstrap: BootstrapConfig {
            replicates: a.replicates,
            seed: a.seed,
            method: if a.percentile { IntervalMethod::Percentile } else { IntervalMethod::Bca },
            ..BootstrapConfig::default()
        },
        criteria: criteria_with_overrides(&parse_overrides(&a.thresholds)?)?,
        latency: match (a.latency_ms, a.no_latency) {
            (Some(ms), _) => LatencyPolicy::Fixed(ms),
            (None, true) => LatencyPolicy::Skip,
            (None, false) => LatencyPolicy::Measure,
        },
        descriptor_override: a.descriptor.clone(),
        ..EvaluationPlan::default()
    };

    let (cohort, evaluation) = match &a.scores {
        Some(path) => {
            let cohort = loaded.cohort;
            let scores = load_score_set(path, &cohort)?;
            let attributions = a
                .attributions
                .as_deref()
                .map(|p| load_attributions_csv(p, &cohort.row_ids))
                .transpose()?;
            let ev = evaluate_all(
                &cohort,
                Scoring::Precomputed {
                    scores: &scores,
                    battery: battery.as_ref(),
                },
                attributions.as_ref(),
                &plan,
            )?;
            (cohort, ev)
        }
        None => {
            if a.attributions.is_some() {
                return Err(Error::InvalidConfig("--attributions needs --scores".into()));
            }
            let (train, test) = stratified_split(&loaded.cohort, a.test_fraction, a.seed)?;
            let model = fit_logistic(&train, &FitConfig::default())?;
            let battery = match battery {
                Some(b) => b,
                None => builtin_battery(&test, a.seed)?,
            };
            let attributions = linear_attributions(&model, &test.features)?;
            let ev = evaluate_all(
                &test,
                Scoring::Model {
                    scorer: &model,
                    battery: &battery,
                },
                Some(&attributions),
                &plan,
            )?;
            (test, ev)
        }
    };

    let doc = build_document(&evaluation, &plan, &cohort, Some(loaded.content_hash));
    if let Some(path) = &a.json {
        std::fs::write(path, doc.to_json()?).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    if !a.quiet {
        print!("{}", render_text(&doc));
    }
    Ok(doc.gate.exit_code)
}

/// Noise on every continuous column and rescaling of `age` (or the first
/// continuous column).
fn builtin_battery(cohort: &predeploy_core::Cohort, seed: u64) -> Result<PerturbationBattery> {
    let continuous: Vec<String> = cohort
        .features
        .columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Continuous)
        .map(|c| c.name.clone())
        .collect();
    let rescale = if continuous.iter().any(|c| c == "age") {
        "age".to_string()
    } else {
        continuous
            .first()
            .cloned()
            .ok_or_else(|| Error::Spec("no continuous column to perturb; pass --battery".into()))?
    };
    default_battery(&cohort.features, &continuous, &rescale, seed)
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.scorecard).map_err(|e| Error::Io {
        path: a.scorecard.clone(),
        source: e,
    })?;
    let doc = ScorecardDocument::from_json(&text)?;
    let id: CriterionId = a.criterion.parse()?;
    let scorecard = predeploy_core::Scorecard {
        dimensions: doc.dimensions,
        equity: doc.equity,
        holm: doc.holm,
        gate: doc.gate.deploy,
        warnings: Vec::new(),
    };
    for (t, v) in threshold_sensitivity_sweep(&scorecard, id, &a.thresholds)? {
        println!("{id}\t{t}\t{v}");
    }
    Ok(0)
}

fn coverage(a: CoverageArgs) -> Result<i32> {
    let config = BootstrapConfig {
        replicates: a.replicates,
        seed: a.seed,
        alpha: a.alpha,
        method: if a.percentile { IntervalMethod::Percentile } else { IntervalMethod::Bca },
        stratify_by_label: false,
    };
    let r = normal_mean_coverage(a.n, a.trials, &config)?;
    println!(
        "n = {}, trials = {}, nominal = {}, covered = {}, degenerate = {}, coverage = {:.4}",
        a.n,
        r.trials,
        1.0 - a.alpha,
        r.covered,
        r.degenerate,
        r.coverage
    );
    println!("{}", serde_json::to_string(&r)?);
    Ok(0)
}

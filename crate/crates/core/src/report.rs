//! Scorecard document (JSON) and the human-readable table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::runner::{Evaluation, EvaluationDetails, EvaluationPlan, LatencyPolicy};
use crate::stats::{BootstrapConfig, HolmFamily};
use crate::verdict::{CriterionResult, DimensionResult, EquityDiagnostic, Scorecard, Verdict};

pub const SCHEMA_VERSION: &str = "1.0";

/// Process exit codes for a finished audit.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFingerprint {
    pub n_rows: usize,
    pub n_positive: usize,
    pub prevalence: f64,
    /// SHA-256 of the cohort file, when loaded from disk.
    pub content_hash: Option<String>,
    pub subgroup_attributes: Vec<String>,
    pub need_proxies: Vec<String>,
}

impl CohortFingerprint {
    pub fn of(cohort: &Cohort, content_hash: Option<String>) -> Self {
        CohortFingerprint {
            n_rows: cohort.n_rows(),
            n_positive: cohort.n_positive(),
            prevalence: cohort.prevalence(),
            content_hash,
            subgroup_attributes: cohort.subgroups.keys().cloned().collect(),
            need_proxies: cohort.need_proxies.keys().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub tau0: f64,
    pub boundary_delta: f64,
    pub ece_bins: usize,
    pub min_group_size: usize,
    pub sweep: Vec<f64>,
    pub bootstrap: BootstrapConfig,
    pub holm_alpha: f64,
    pub thresholds: BTreeMap<String, f64>,
    pub latency: LatencyPolicy,
    pub battery: Vec<String>,
}

impl ConfigEcho {
    fn of(plan: &EvaluationPlan, battery: &[String]) -> Self {
        ConfigEcho {
            tau0: plan.tau0,
            boundary_delta: plan.boundary_delta,
            ece_bins: plan.ece_bins,
            min_group_size: plan.min_group_size,
            sweep: plan.sweep.clone(),
            bootstrap: plan.bootstrap.clone(),
            holm_alpha: plan.holm_alpha,
            thresholds: plan.criteria.iter().map(|c| (c.id.to_string(), c.threshold)).collect(),
            latency: plan.latency.clone(),
            battery: battery.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSummary {
    pub deploy: bool,
    pub verdict: Verdict,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorecardDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub model: String,
    pub cohort: CohortFingerprint,
    pub config: ConfigEcho,
    pub dimensions: Vec<DimensionResult>,
    pub equity: Option<EquityDiagnostic>,
    pub holm: HolmFamily,
    pub gate: GateSummary,
    pub details: EvaluationDetails,
    pub warnings: Vec<String>,
}

/// 0 when the gate passes, 1 on any gating FAIL, 3 when something gating is
/// INCONCLUSIVE and nothing failed.
pub fn exit_code(scorecard: &Scorecard) -> i32 {
    if scorecard.gate {
        EXIT_PASS
    } else if scorecard.any_gating(Verdict::Fail) {
        EXIT_FAIL
    } else {
        EXIT_INCONCLUSIVE
    }
}

fn gate_verdict(scorecard: &Scorecard) -> Verdict {
    match exit_code(scorecard) {
        EXIT_PASS => Verdict::Pass,
        EXIT_FAIL => Verdict::Fail,
        _ => Verdict::Inconclusive,
    }
}

pub fn build_document(
    evaluation: &Evaluation,
    plan: &EvaluationPlan,
    cohort: &Cohort,
    content_hash: Option<String>,
) -> ScorecardDocument {
    let sc = &evaluation.scorecard;
    ScorecardDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: evaluation.descriptor.clone(),
        cohort: CohortFingerprint::of(cohort, content_hash),
        config: ConfigEcho::of(plan, &evaluation.battery_ids),
        dimensions: sc.dimensions.clone(),
        equity: sc.equity.clone(),
        holm: sc.holm.clone(),
        gate: GateSummary {
            deploy: sc.gate,
            verdict: gate_verdict(sc),
            exit_code: exit_code(sc),
        },
        details: evaluation.details.clone(),
        warnings: evaluation.warnings.clone(),
    }
}

impl ScorecardDocument {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and checks a document; unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScorecardDocument = serde_json::from_str(text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "scorecard schema version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

/// `x` rounded to four significant digits.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.9996 -> 10.000).
    let carried = s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len();
    if decimals > 0 && carried > 4 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig4).unwrap_or_else(|| "-".into())
}

fn row(c: &CriterionResult) -> [String; 7] {
    let ci = match (c.ci_lo, c.ci_hi) {
        (Some(lo), Some(hi)) => format!("[{}, {}]", sig4(lo), sig4(hi)),
        _ => "-".into(),
    };
    let op = match c.direction {
        crate::stats::Direction::UpperBounded => "<=",
        crate::stats::Direction::LowerBounded => ">=",
    };
    let id = match &c.proxy {
        Some(p) => format!("{} ({p})", c.id),
        None => c.id.to_string(),
    };
    let verdict = match c.reason.and_then(|r| serde_json::to_value(r).ok()) {
        Some(serde_json::Value::String(r)) => format!("{} ({r})", c.verdict),
        _ => c.verdict.to_string(),
    };
    [
        id,
        c.metric.clone(),
        opt(c.value),
        ci,
        format!("{op} {}", sig4(c.threshold)),
        opt(c.p_boot),
        verdict,
    ]
}

/// Fixed-width text table of the scorecard.
pub fn render_text(doc: &ScorecardDocument) -> String {
    let header = ["criterion", "metric", "value", "95% CI", "threshold", "p_boot", "verdict"];
    let mut rows: Vec<(Option<String>, [String; 7])> = Vec::new();
    for d in &doc.dimensions {
        rows.push((Some(format!("{}: {}", d.dimension.title(), d.verdict)), Default::default()));
        rows.extend(d.criteria.iter().map(|c| (None, row(c))));
    }
    if let Some(e) = &doc.equity {
        rows.push((Some("Equity: DIAGNOSTIC".into()), Default::default()));
        rows.extend(e.criteria.iter().map(|c| (None, row(c))));
    }
    let mut widths = header.map(str::len);
    for (_, r) in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "model:  {}", doc.model);
    let _ = writeln!(
        out,
        "cohort: n = {}, positives = {}, prevalence = {}",
        doc.cohort.n_rows,
        doc.cohort.n_positive,
        sig4(doc.cohort.prevalence)
    );
    out.push('\n');
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(&header.map(String::from)));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for (title, r) in &rows {
        match title {
            Some(t) => {
                let _ = writeln!(out, "{t}");
            }
            None => {
                let _ = writeln!(out, "  {}", line(r));
            }
        }
    }
    let _ = writeln!(
        out,
        "\nHolm family: m = {}, alpha = {}",
        doc.holm.m,
        sig4(doc.holm.alpha)
    );
    for e in &doc.holm.entries {
        match (e.p, e.adjusted_alpha) {
            (Some(p), Some(a)) => {
                let _ = writeln!(
                    out,
                    "  {:>2}. {:<3} p = {:<10} alpha/(m-k+1) = {:<10} {}",
                    e.step,
                    e.id,
                    sig4(p),
                    sig4(a),
                    if e.rejected { "rejected" } else { "not rejected" }
                );
            }
            _ => {
                let _ = writeln!(
                    out,
                    "  {:>2}. {:<3} exempt: {}",
                    e.step,
                    e.id,
                    e.exempt_reason.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(
        out,
        "\nDEPLOYMENT GATE: {}{}",
        doc.gate.verdict,
        if doc.gate.deploy { "" } else { " (do not deploy)" }
    );
    if !doc.warnings.is_empty() {
        let _ = writeln!(out, "\nwarnings:");
        for w in &doc.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    out
}

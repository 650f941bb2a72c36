//! Scorer contract, the built-in logistic baseline, and precomputed score sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Column, ColumnKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::metrics::ScoreVector;

/// Anything that maps a feature matrix to probabilities in `[0, 1]`.
///
/// Implementations must be pure: the same matrix always yields the same
/// scores.
pub trait Scorer: Send + Sync {
    fn score(&self, x: &FeatureMatrix) -> Result<ScoreVector>;
    fn descriptor(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Fraction of the maximal safe step `1/L`; values in `(0, 1]` descend.
    pub learning_rate: f64,
    pub max_iter: usize,
    pub l2: f64,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1.0,
            max_iter: 5000,
            l2: 1e-4,
            tolerance: 1e-8,
        }
    }
}

/// Which source column and value an expanded design column encodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Term {
    Value(usize),
    Indicator(usize, u32),
}

impl Term {
    fn source(self) -> usize {
        match self {
            Term::Value(j) | Term::Indicator(j, _) => j,
        }
    }

    #[inline]
    fn raw(self, row: &[f64]) -> f64 {
        match self {
            Term::Value(j) => row[j],
            Term::Indicator(j, code) => f64::from(u8::from(row[j] as u32 == code)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticBaseline {
    columns: Vec<Column>,
    terms: Vec<Term>,
    means: Vec<f64>,
    sds: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    fit_config: FitConfig,
    iterations: usize,
    converged: bool,
    /// Training loss every 100 iterations and at the end.
    loss_trace: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn expand_terms(columns: &[Column]) -> Vec<Term> {
    let mut terms = Vec::new();
    for (j, c) in columns.iter().enumerate() {
        match c.kind {
            ColumnKind::Categorical => {
                terms.extend((0..c.levels.len() as u32).map(|code| Term::Indicator(j, code)));
            }
            _ => terms.push(Term::Value(j)),
        }
    }
    terms
}

fn log_loss(z: &[f64], y: &[f64], p: usize, w: &[f64], b: f64, l2: f64) -> f64 {
    let n = y.len();
    let mut loss = 0.0;
    for i in 0..n {
        let eta = b + dot(&z[i * p..(i + 1) * p], w);
        // log(1 + e^eta) - y * eta, computed stably
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        loss += softplus - y[i] * eta;
    }
    loss / n as f64 + 0.5 * l2 * dot(w, w)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits an L2-penalized logistic regression by full-batch gradient descent
/// on standardized features. Categorical columns are one-hot expanded.
pub fn fit_logistic(train: &Cohort, config: &FitConfig) -> Result<LogisticBaseline> {
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate {} must lie in (0, 1]",
            config.learning_rate
        )));
    }
    if config.l2 < 0.0 || config.max_iter == 0 {
        return Err(Error::InvalidConfig("l2 must be >= 0 and max_iter > 0".into()));
    }
    let n_pos = train.n_positive();
    if n_pos == 0 || n_pos == train.n_rows() {
        return Err(Error::Fit("training data holds a single class".into()));
    }
    let x = &train.features;
    let columns = x.columns().to_vec();
    let terms = expand_terms(&columns);
    let n = x.n_rows();
    let p = terms.len();

    let mut z = vec![0.0; n * p];
    for i in 0..n {
        let row = x.row(i);
        for (k, t) in terms.iter().enumerate() {
            z[i * p + k] = t.raw(row);
        }
    }
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for k in 0..p {
        let m = (0..n).map(|i| z[i * p + k]).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (z[i * p + k] - m).powi(2)).sum::<f64>() / n as f64;
        means[k] = m;
        sds[k] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    for i in 0..n {
        for k in 0..p {
            z[i * p + k] = (z[i * p + k] - means[k]) / sds[k];
        }
    }
    let y = train.labels_f64();

    // Lipschitz bound of the gradient, bias column included.
    let frob: f64 = z.iter().map(|v| v * v).sum::<f64>() + n as f64;
    let lipschitz = 0.25 * frob / n as f64 + config.l2;
    let step = config.learning_rate / lipschitz;

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut grad = vec![0.0; p];
    let mut loss_trace = vec![log_loss(&z, &y, p, &w, b, config.l2)];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let zi = &z[i * p..(i + 1) * p];
            let r = sigmoid(b + dot(zi, &w)) - y[i];
            grad_b += r;
            for (g, v) in grad.iter_mut().zip(zi) {
                *g += r * v;
            }
        }
        grad_b /= n as f64;
        let mut max_norm = grad_b.abs();
        for (g, wk) in grad.iter_mut().zip(&w) {
            *g = *g / n as f64 + config.l2 * wk;
            max_norm = max_norm.max(g.abs());
        }
        iterations = it;
        if max_norm < config.tolerance {
            converged = true;
            break;
        }
        b -= step * grad_b;
        for (wk, g) in w.iter_mut().zip(&grad) {
            *wk -= step * g;
        }
        if it % 100 == 0 {
            loss_trace.push(log_loss(&z, &y, p, &w, b, config.l2));
        }
    }
    loss_trace.push(log_loss(&z, &y, p, &w, b, config.l2));

    Ok(LogisticBaseline {
        columns,
        terms,
        means,
        sds,
        weights: w,
        bias: b,
        fit_config: config.clone(),
        iterations,
        converged,
        loss_trace,
    })
}

impl LogisticBaseline {
    /// A model with explicit weights on the raw (standardization-free)
    /// scale of continuous and flag columns. Categorical columns are not
    /// supported here.
    pub fn from_weights(columns: Vec<Column>, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if columns.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} columns",
                weights.len(),
                columns.len()
            )));
        }
        if columns.iter().any(|c| c.kind == ColumnKind::Categorical) {
            return Err(Error::InvalidConfig("from_weights takes no categorical columns".into()));
        }
        let terms = expand_terms(&columns);
        let p = terms.len();
        Ok(LogisticBaseline {
            columns,
            terms,
            means: vec![0.0; p],
            sds: vec![1.0; p],
            weights,
            bias,
            fit_config: FitConfig::default(),
            iterations: 0,
            converged: true,
            loss_trace: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn fit_config(&self) -> &FitConfig {
        &self.fit_config
    }

    pub(crate) fn check_layout(&self, x: &FeatureMatrix) -> Result<()> {
        let same = x.n_cols() == self.columns.len()
            && x
                .columns()
                .iter()
                .zip(&self.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.levels.len() == b.levels.len());
        if !same {
            return Err(Error::Shape(format!(
                "matrix columns [{}] do not match the fitted layout [{}]",
                x.column_names().join(", "),
                self.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    #[inline]
    fn standardized(&self, k: usize, row: &[f64]) -> f64 {
        (self.terms[k].raw(row) - self.means[k]) / self.sds[k]
    }

    /// Linear predictor for one raw row.
    pub fn logit(&self, row: &[f64]) -> f64 {
        self.bias
            + (0..self.terms.len())
                .map(|k| self.weights[k] * self.standardized(k, row))
                .sum::<f64>()
    }

    /// Per-source-column contributions `w_k * (z_k - zbar_k)` where the
    /// background `zbar` is the training mean, i.e. zero after
    /// standardization. Indicator terms of a categorical column are summed.
    pub(crate) fn row_contributions(&self, row: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, t) in self.terms.iter().enumerate() {
            out[t.source()] += self.weights[k] * self.standardized(k, row);
        }
    }

    /// Training column means on the raw scale; categorical columns report
    /// the most frequent code.
    pub fn background(&self) -> Vec<f64> {
        let mut bg = vec![0.0; self.columns.len()];
        let mut best = vec![f64::NEG_INFINITY; self.columns.len()];
        for (k, t) in self.terms.iter().enumerate() {
            match *t {
                Term::Value(j) => bg[j] = self.means[k],
                Term::Indicator(j, code) => {
                    if self.means[k] > best[j] {
                        best[j] = self.means[k];
                        bg[j] = f64::from(code);
                    }
                }
            }
        }
        bg
    }

    /// Plain-text dump of the fitted weights.
    pub fn weight_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bias\t{}", self.bias);
        for (k, t) in self.terms.iter().enumerate() {
            let name = match *t {
                Term::Value(j) => self.columns[j].name.clone(),
                Term::Indicator(j, code) => {
                    format!("{}={}", self.columns[j].name, self.columns[j].levels[code as usize])
                }
            };
            let _ = writeln!(
                out,
                "{name}\t{}\tmean={}\tsd={}",
                self.weights[k], self.means[k], self.sds[k]
            );
        }
        out
    }
}

impl Scorer for LogisticBaseline {
    fn score(&self, x: &FeatureMatrix) -> Result<ScoreVector> {
        self.check_layout(x)?;
        ScoreVector::new((0..x.n_rows()).map(|i| sigmoid(self.logit(x.row(i)))).collect())
    }

    fn descriptor(&self) -> String {
        format!(
            "logistic-baseline(terms={}, l2={}, iterations={}, converged={})",
            self.terms.len(),
            self.fit_config.l2,
            self.iterations,
            self.converged
        )
    }
}

/// Precomputed baseline and per-perturbation scores aligned to a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub baseline: ScoreVector,
    pub perturbed: BTreeMap<String, ScoreVector>,
}

impl ScoreSet {
    pub fn n_rows(&self) -> usize {
        self.baseline.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ScoreSet {
        ScoreSet {
            baseline: self.baseline.select_rows(rows),
            perturbed: self
                .perturbed
                .iter()
                .map(|(k, v)| (k.clone(), v.select_rows(rows)))
                .collect(),
        }
    }
}

const PERTURBED_PREFIX: &str = "score@";

/// Reads `id,score[,score@<perturbation-id>...]` and aligns rows to the
/// cohort's ids.
pub fn load_score_set(path: &Path, cohort: &Cohort) -> Result<ScoreSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Error::Schema("score file has no `id` column".into()))?;
    let base_col = headers
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| Error::Schema("score file has no `score` column".into()))?;
    let pert_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(PERTURBED_PREFIX).map(|id| (i, id.to_string())))
        .collect();

    let index: HashMap<&str, usize> = cohort
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = cohort.n_rows();
    let mut seen = vec![false; n];
    let mut base = vec![0.0; n];
    let mut pert = vec![vec![0.0; n]; pert_cols.len()];

    let parse = |cell: &str, id: &str, col: &str| -> Result<f64> {
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| Error::Range(format!("row `{id}` column `{col}`: `{cell}` is not a number")))?;
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(Error::Range(format!("row `{id}` column `{col}`: score {v} outside [0, 1]")));
        }
        Ok(v)
    };

    for record in reader.records() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("");
        let &row = index
            .get(id)
            .ok_or_else(|| Error::Alignment(format!("row id `{id}` is not in the cohort")))?;
        if seen[row] {
            return Err(Error::Alignment(format!("row id `{id}` appears twice")));
        }
        seen[row] = true;
        base[row] = parse(record.get(base_col).unwrap_or(""), id, "score")?;
        for (slot, (c, name)) in pert.iter_mut().zip(&pert_cols) {
            slot[row] = parse(record.get(*c).unwrap_or(""), id, &format!("{PERTURBED_PREFIX}{name}"))?;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let count = seen.iter().filter(|s| !**s).count();
        return Err(Error::Alignment(format!(
            "{count} cohort rows have no score (first: `{}`)",
            cohort.row_ids[missing]
        )));
    }
    Ok(ScoreSet {
        baseline: ScoreVector::new(base)?,
        perturbed: pert_cols
            .into_iter()
            .zip(pert)
            .map(|((_, name), v)| Ok((name, ScoreVector::new(v)?)))
            .collect::<Result<_>>()?,
    })
}

/// Writes a score set in the format [`load_score_set`] reads. Columns follow
/// `order` when given, otherwise the map's order.
pub fn write_score_set(path: &Path, row_ids: &[String], scores: &ScoreSet, order: Option<&[String]>) -> Result<()> {
    if row_ids.len() != scores.n_rows() {
        return Err(Error::Shape(format!(
            "{} row ids for {} scores",
            row_ids.len(),
            scores.n_rows()
        )));
    }
    let ids: Vec<&String> = match order {
        Some(o) => o.iter().collect(),
        None => scores.perturbed.keys().collect(),
    };
    let columns: Vec<&ScoreVector> = ids
        .iter()
        .map(|id| {
            scores
                .perturbed
                .get(*id)
                .ok_or_else(|| Error::Plan(format!("no scores for perturbation `{id}`")))
        })
        .collect::<Result<_>>()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "score".to_string()];
    header.extend(ids.iter().map(|id| format!("{PERTURBED_PREFIX}{id}")));
    writer.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), format_score(scores.baseline[i])];
        rec.extend(columns.iter().map(|c| format_score(c[i])));
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn format_score(v: f64) -> String {
    format!("{v:?}")
}

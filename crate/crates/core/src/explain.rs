//! Per-row feature attributions: exact for the logistic baseline, Monte
//! Carlo permutation Shapley for any other scorer.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{LogisticBaseline, Scorer};
use crate::stats::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributionProvider {
    LinearExact,
    ShapleySampled { samples: usize, seed: u64 },
    /// Loaded from a file produced elsewhere.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    values: Vec<f64>,
    feature_names: Vec<String>,
    provider: AttributionProvider,
    background: Vec<f64>,
}

impl AttributionMatrix {
    pub fn new(
        values: Vec<f64>,
        feature_names: Vec<String>,
        provider: AttributionProvider,
        background: Vec<f64>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 || values.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} attribution values for {d} features",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("non-finite attribution".into()));
        }
        Ok(AttributionMatrix {
            values,
            feature_names,
            provider,
            background,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.feature_names.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn provider(&self) -> &AttributionProvider {
        &self.provider
    }

    /// Per-column reference values the attributions are measured against.
    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn select_rows(&self, rows: &[usize]) -> AttributionMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        AttributionMatrix {
            values,
            ..self.clone()
        }
    }
}

/// Exact Shapley values of the logit for the logistic baseline, against the
/// training means as background.
pub fn linear_attributions(model: &LogisticBaseline, x: &FeatureMatrix) -> Result<AttributionMatrix> {
    model.check_layout(x)?;
    let d = x.n_cols();
    let mut values = vec![0.0; x.n_rows() * d];
    for (i, out) in values.chunks_mut(d).enumerate() {
        model.row_contributions(x.row(i), out);
    }
    AttributionMatrix::new(
        values,
        x.column_names().iter().map(|s| s.to_string()).collect(),
        AttributionProvider::LinearExact,
        model.background(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyConfig {
    /// Feature orderings sampled per row.
    pub samples: usize,
    pub seed: u64,
    /// Attribute the logit of the score rather than the probability, so a
    /// logistic model is additive in its inputs.
    pub logit_link: bool,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        ShapleyConfig {
            samples: 128,
            seed: 42,
            logit_link: true,
        }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Permutation-sampling Shapley values. For each row and each of `samples`
/// draws, a background row and a feature ordering are sampled; features are
/// switched from background to the row's value in that order and each
/// switch's change in output is credited to the switched feature.
///
/// Each row uses its own RNG stream, so results do not depend on
/// scheduling.
pub fn shapley_sampled(
    scorer: &dyn Scorer,
    x: &FeatureMatrix,
    background: &FeatureMatrix,
    config: &ShapleyConfig,
) -> Result<AttributionMatrix> {
    if config.samples < 16 {
        return Err(Error::InvalidConfig(format!(
            "shapley sampling needs at least 16 orderings, got {}",
            config.samples
        )));
    }
    if background.n_rows() == 0 {
        return Err(Error::InvalidConfig("shapley background is empty".into()));
    }
    if background.columns() != x.columns() {
        return Err(Error::Shape("background columns differ from the scored matrix".into()));
    }
    let d = x.n_cols();
    let k = config.samples;
    let link = |p: f64| if config.logit_link { logit(p) } else { p };

    let rows: Vec<Result<Vec<f64>>> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, i as u64, 0));
            let target = x.row(i);
            let mut orders = Vec::with_capacity(k);
            // k chains of d + 1 rows each: the background row, then one
            // feature switched at a time.
            let mut chain = Vec::with_capacity(k * (d + 1) * d);
            let mut perm: Vec<usize> = (0..d).collect();
            for _ in 0..k {
                let b = rng.random_range(0..background.n_rows());
                perm.shuffle(&mut rng);
                let mut cur = background.row(b).to_vec();
                chain.extend_from_slice(&cur);
                for &j in &perm {
                    cur[j] = target[j];
                    chain.extend_from_slice(&cur);
                }
                orders.push(perm.clone());
            }
            let batch = FeatureMatrix::new(x.columns().to_vec(), chain)?;
            let out = scorer.score(&batch)?;
            let mut phi = vec![0.0; d];
            for (s, order) in orders.iter().enumerate() {
                let base = s * (d + 1);
                for (step, &j) in order.iter().enumerate() {
                    phi[j] += link(out[base + step + 1]) - link(out[base + step]);
                }
            }
            phi.iter_mut().for_each(|v| *v /= k as f64);
            Ok(phi)
        })
        .collect();

    let mut values = Vec::with_capacity(x.n_rows() * d);
    for r in rows {
        values.extend(r?);
    }
    let bg_means = (0..d)
        .map(|j| background.column(j).iter().sum::<f64>() / background.n_rows() as f64)
        .collect();
    AttributionMatrix::new(
        values,
        x.column_names().iter().map(|s| s.to_string()).collect(),
        AttributionProvider::ShapleySampled {
            samples: k,
            seed: config.seed,
        },
        bg_means,
    )
}

/// Writes `id,<feature>...` rows.
pub fn write_attributions_csv(path: &Path, row_ids: &[String], m: &AttributionMatrix) -> Result<()> {
    if row_ids.len() != m.n_rows() {
        return Err(Error::Shape(format!(
            "{} row ids for {} attribution rows",
            row_ids.len(),
            m.n_rows()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string()];
    header.extend(m.feature_names().iter().cloned());
    w.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an attribution CSV and aligns its rows to `row_ids`.
pub fn load_attributions_csv(path: &Path, row_ids: &[String]) -> Result<AttributionMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::Schema("attribution file must start with an `id` column".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let d = names.len();
    let index: HashMap<&str, usize> = row_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut values = vec![0.0; row_ids.len() * d];
    let mut seen = vec![false; row_ids.len()];
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or("");
        let &row = index
            .get(id)
            .ok_or_else(|| Error::Alignment(format!("attribution row `{id}` is not in the cohort")))?;
        if std::mem::replace(&mut seen[row], true) {
            return Err(Error::Alignment(format!("attribution row `{id}` appears twice")));
        }
        for j in 0..d {
            let cell = record.get(j + 1).unwrap_or("");
            values[row * d + j] = cell
                .trim()
                .parse()
                .map_err(|_| Error::Range(format!("attribution `{cell}` for row `{id}` is not a number")))?;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Alignment("attribution file does not cover every cohort row".into()));
    }
    AttributionMatrix::new(values, names, AttributionProvider::External, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Column;

    fn model() -> LogisticBaseline {
        let cols = vec![Column::continuous("a"), Column::continuous("b"), Column::flag("c")];
        LogisticBaseline::from_weights(cols, vec![0.8, 0.0, -1.5], 0.3).unwrap()
    }

    fn matrix(rows: &[[f64; 3]]) -> FeatureMatrix {
        FeatureMatrix::new(model().columns().to_vec(), rows.iter().flatten().cloned().collect()).unwrap()
    }

    #[test]
    fn linear_attributions_are_additive() {
        let m = model();
        let x = matrix(&[[1.0, 2.0, 0.0], [-0.5, 9.0, 1.0], [0.0, 0.0, 0.0]]);
        let a = linear_attributions(&m, &x).unwrap();
        for i in 0..3 {
            let total: f64 = a.row(i).iter().sum();
            assert!((total + m.bias() - m.logit(x.row(i))).abs() < 1e-12);
        }
        // zero weight on `b` means no attribution
        assert!((0..3).all(|i| a.row(i)[1] == 0.0));
        // background row attributes nothing
        assert!(a.row(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampled_null_player_is_exactly_zero() {
        let m = model();
        let x = matrix(&[[1.0, 2.0, 0.0], [-0.5, 9.0, 1.0]]);
        let bg = matrix(&[[0.0, 0.0, 0.0], [1.0, 5.0, 1.0], [2.0, -1.0, 0.0]]);
        let cfg = ShapleyConfig {
            samples: 64,
            ..ShapleyConfig::default()
        };
        let a = shapley_sampled(&m, &x, &bg, &cfg).unwrap();
        assert!(a.row(0)[1].abs() < 1e-9 && a.row(1)[1].abs() < 1e-9);
        assert_eq!(a, shapley_sampled(&m, &x, &bg, &cfg).unwrap());
    }

    #[test]
    fn duplicate_features_share_credit() {
        let cols = vec![Column::continuous("a"), Column::continuous("a2"), Column::continuous("z")];
        let m = LogisticBaseline::from_weights(cols.clone(), vec![0.5, 0.5, 0.1], 0.0).unwrap();
        let x = FeatureMatrix::new(cols.clone(), vec![2.0, 2.0, 1.0]).unwrap();
        let bg = FeatureMatrix::new(cols, vec![0.0, 0.0, 0.0]).unwrap();
        let a = shapley_sampled(&m, &x, &bg, &ShapleyConfig::default()).unwrap();
        assert!((a.row(0)[0] - a.row(0)[1]).abs() < 1e-9);
    }

    #[test]
    fn rejects_few_samples() {
        let m = model();
        let x = matrix(&[[1.0, 2.0, 0.0]]);
        let cfg = ShapleyConfig {
            samples: 8,
            ..ShapleyConfig::default()
        };
        assert!(shapley_sampled(&m, &x, &x, &cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = model();
        let x = matrix(&[[1.0, 2.0, 0.0], [-0.5, 9.0, 1.0]]);
        let a = linear_attributions(&m, &x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("attr.csv");
        let ids = vec!["x".to_string(), "y".to_string()];
        write_attributions_csv(&p, &ids, &a).unwrap();
        let back = load_attributions_csv(&p, &ids).unwrap();
        assert_eq!(back.values(), a.values());
        assert_eq!(back.feature_names(), a.feature_names());
    }
}

//! Perturbation battery: semantically-preserving input transforms.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{ColumnKind, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Adds `N(0, (sigma * sd_j)^2)` to each targeted continuous column `j`,
    /// where `sd_j` is the column's SD in the matrix being perturbed.
    GaussianNoise {
        sigma: f64,
        /// Target columns; all continuous columns when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<String>>,
    },
    ColumnRescale { column: String, factor: f64 },
    /// Replaces values by level name (categorical) or by numeric value
    /// written as text (flags and continuous).
    ValueMap {
        column: String,
        mapping: BTreeMap<String, String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: PerturbationKind,
    #[serde(default)]
    pub seed_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBattery {
    pub master_seed: u64,
    /// Clamp perturbed continuous values to the column's observed range.
    #[serde(default)]
    pub clamp_to_observed: bool,
    #[serde(rename = "spec")]
    pub specs: Vec<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PerturbationBattery {
    pub fn new(specs: Vec<PerturbationSpec>, master_seed: u64) -> Result<Self> {
        let battery = PerturbationBattery {
            master_seed,
            clamp_to_observed: false,
            specs,
            notes: Vec::new(),
        };
        battery.validate()?;
        Ok(battery)
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::Spec("perturbation battery is empty".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.specs {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Spec(format!("duplicate perturbation id `{}`", s.id)));
            }
            if s.id.is_empty() || s.id.contains(',') {
                return Err(Error::Spec(format!("perturbation id `{}` must be non-empty and comma-free", s.id)));
            }
            match &s.kind {
                PerturbationKind::GaussianNoise { sigma, .. } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                    return Err(Error::Spec(format!("`{}`: sigma {sigma} must be >= 0", s.id)));
                }
                PerturbationKind::ColumnRescale { factor, .. } if !(*factor > 0.0 && factor.is_finite()) => {
                    return Err(Error::Spec(format!("`{}`: factor {factor} must be > 0", s.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.id.clone()).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let battery: PerturbationBattery = toml::from_str(text)?;
        battery.validate()?;
        Ok(battery)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("battery serializes to TOML")
    }

    /// Applies every spec, in order.
    pub fn apply_all(&self, x: &FeatureMatrix) -> Result<Vec<FeatureMatrix>> {
        self.specs
            .iter()
            .map(|s| apply_with(s, x, self.master_seed, self.clamp_to_observed))
            .collect()
    }
}

fn column_of(x: &FeatureMatrix, name: &str, spec: &str) -> Result<usize> {
    x.column_index(name)
        .ok_or_else(|| Error::Spec(format!("`{spec}`: column `{name}` does not exist")))
}

fn parse_code(x: &FeatureMatrix, col: usize, token: &str, spec: &str) -> Result<f64> {
    let c = &x.columns()[col];
    match c.kind {
        ColumnKind::Categorical => c
            .levels
            .iter()
            .position(|l| l == token)
            .map(|p| p as f64)
            .ok_or_else(|| Error::Spec(format!("`{spec}`: `{token}` is not a level of `{}`", c.name))),
        ColumnKind::BinaryFlag => match token {
            "0" => Ok(0.0),
            "1" => Ok(1.0),
            _ => Err(Error::Spec(format!("`{spec}`: flag value `{token}` is not 0 or 1"))),
        },
        ColumnKind::Continuous => token
            .parse()
            .map_err(|_| Error::Spec(format!("`{spec}`: `{token}` is not a number"))),
    }
}

fn clamp_column(data: &mut [f64], lo: f64, hi: f64) {
    for v in data {
        *v = v.clamp(lo, hi);
    }
}

fn observed_range(data: &[f64]) -> (f64, f64) {
    data.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Applies one spec without clamping.
pub fn apply(spec: &PerturbationSpec, x: &FeatureMatrix, master_seed: u64) -> Result<FeatureMatrix> {
    apply_with(spec, x, master_seed, false)
}

/// Applies one spec. Untargeted columns are copied bit for bit. Noise draws
/// come from the stream `master_seed ^ seed_offset`, row-major over the
/// targeted columns.
pub fn apply_with(spec: &PerturbationSpec, x: &FeatureMatrix, master_seed: u64, clamp: bool) -> Result<FeatureMatrix> {
    let mut out = x.clone();
    match &spec.kind {
        PerturbationKind::GaussianNoise { sigma, columns } => {
            if !(*sigma >= 0.0) {
                return Err(Error::Spec(format!("`{}`: sigma {sigma} must be >= 0", spec.id)));
            }
            let targets: Vec<usize> = match columns {
                Some(names) => names
                    .iter()
                    .map(|n| {
                        let j = column_of(x, n, &spec.id)?;
                        if x.columns()[j].kind != ColumnKind::Continuous {
                            return Err(Error::Spec(format!(
                                "`{}`: noise targets non-continuous column `{n}`",
                                spec.id
                            )));
                        }
                        Ok(j)
                    })
                    .collect::<Result<_>>()?,
                None => (0..x.n_cols())
                    .filter(|&j| x.columns()[j].kind == ColumnKind::Continuous)
                    .collect(),
            };
            if *sigma == 0.0 || targets.is_empty() {
                return Ok(out);
            }
            let scales: Vec<f64> = targets.iter().map(|&j| sigma * x.column_sd(j)).collect();
            let mut cols: Vec<Vec<f64>> = targets.iter().map(|&j| x.column(j)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ spec.seed_offset);
            for i in 0..x.n_rows() {
                for (t, col) in cols.iter_mut().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    col[i] += scales[t] * e;
                }
            }
            for (t, &j) in targets.iter().enumerate() {
                if clamp {
                    let (lo, hi) = observed_range(&x.column(j));
                    clamp_column(&mut cols[t], lo, hi);
                }
                out.set_column(j, &cols[t]);
            }
        }
        PerturbationKind::ColumnRescale { column, factor } => {
            if !(*factor > 0.0) {
                return Err(Error::Spec(format!("`{}`: factor {factor} must be > 0", spec.id)));
            }
            let j = column_of(x, column, &spec.id)?;
            if x.columns()[j].kind != ColumnKind::Continuous {
                return Err(Error::Spec(format!(
                    "`{}`: rescale targets non-continuous column `{column}`",
                    spec.id
                )));
            }
            let orig = x.column(j);
            let mut col: Vec<f64> = orig.iter().map(|v| v * factor).collect();
            if clamp {
                let (lo, hi) = observed_range(&orig);
                clamp_column(&mut col, lo, hi);
            }
            out.set_column(j, &col);
        }
        PerturbationKind::ValueMap { column, mapping } => {
            let j = column_of(x, column, &spec.id)?;
            let mut table: Vec<(f64, f64)> = Vec::with_capacity(mapping.len());
            for (from, to) in mapping {
                table.push((
                    parse_code(x, j, from, &spec.id)?,
                    parse_code(x, j, to, &spec.id)?,
                ));
            }
            let col: Vec<f64> = x
                .column(j)
                .iter()
                .map(|v| {
                    table
                        .iter()
                        .find(|(f, _)| f == v)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| {
                            Error::Spec(format!("`{}`: value map has no entry for observed value {v}", spec.id))
                        })
                })
                .collect::<Result<_>>()?;
            out.set_column(j, &col);
        }
    }
    Ok(out)
}

/// Two noise levels over `noise_columns` plus two rescalings of
/// `rescale_column`. With no noise columns only the rescalings remain and a
/// note records why.
pub fn default_battery(
    x: &FeatureMatrix,
    noise_columns: &[String],
    rescale_column: &str,
    master_seed: u64,
) -> Result<PerturbationBattery> {
    for name in noise_columns.iter().map(String::as_str).chain([rescale_column]) {
        let j = column_of(x, name, "default battery")?;
        if x.columns()[j].kind != ColumnKind::Continuous {
            return Err(Error::Spec(format!("default battery: column `{name}` is not continuous")));
        }
    }
    let continuous_columns = noise_columns;
    let mut specs = Vec::new();
    let mut notes = Vec::new();
    if continuous_columns.is_empty() {
        notes.push("no continuous columns: gaussian noise specs omitted".to_string());
    } else {
        for (offset, sigma) in [(1u64, 0.05), (2, 0.10)] {
            specs.push(PerturbationSpec {
                id: format!("noise_{sigma:.2}"),
                kind: PerturbationKind::GaussianNoise {
                    sigma,
                    columns: Some(continuous_columns.to_vec()),
                },
                seed_offset: offset,
            });
        }
    }
    for (offset, factor) in [(3u64, 1.05), (4, 1.06)] {
        specs.push(PerturbationSpec {
            id: format!("{rescale_column}_x{factor:.2}"),
            kind: PerturbationKind::ColumnRescale {
                column: rescale_column.to_string(),
                factor,
            },
            seed_offset: offset,
        });
    }
    let mut b = PerturbationBattery::new(specs, master_seed)?;
    b.notes = notes;
    Ok(b)
}

/// A battery of one noise spec per sigma, as used by the PSS monotonicity
/// check.
pub fn noise_battery(sigmas: &[f64], master_seed: u64) -> Result<PerturbationBattery> {
    let specs = sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma)| PerturbationSpec {
            id: format!("noise_{sigma}"),
            kind: PerturbationKind::GaussianNoise { sigma, columns: None },
            seed_offset: k as u64 + 1,
        })
        .collect();
    PerturbationBattery::new(specs, master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Column;

    fn x() -> FeatureMatrix {
        let cols = vec![
            Column::continuous("age"),
            Column::continuous("bmi"),
            Column::flag("chf"),
            Column::categorical("sex", vec!["F".into(), "M".into()]),
        ];
        let mut v = Vec::new();
        for i in 0..50 {
            v.extend([40.0 + i as f64, 20.0 + (i % 7) as f64, (i % 2) as f64, ((i / 3) % 2) as f64]);
        }
        FeatureMatrix::new(cols, v).unwrap()
    }

    fn noise(sigma: f64) -> PerturbationSpec {
        PerturbationSpec {
            id: "n".into(),
            kind: PerturbationKind::GaussianNoise { sigma, columns: None },
            seed_offset: 7,
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        assert_eq!(apply(&noise(0.0), &x(), 42).unwrap(), x());
    }

    #[test]
    fn noise_touches_only_continuous_and_is_seeded() {
        let a = apply(&noise(0.1), &x(), 42).unwrap();
        let b = apply(&noise(0.1), &x(), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.column(0), x().column(0));
        assert_eq!(a.column(2), x().column(2));
        assert_eq!(a.column(3), x().column(3));
        assert_ne!(apply(&noise(0.1), &x(), 43).unwrap(), a);
    }

    #[test]
    fn rescale_age() {
        let spec = PerturbationSpec {
            id: "age_x1.05".into(),
            kind: PerturbationKind::ColumnRescale {
                column: "age".into(),
                factor: 1.05,
            },
            seed_offset: 0,
        };
        let out = apply(&spec, &x(), 0).unwrap();
        for (o, i) in out.column(0).iter().zip(x().column(0)) {
            assert_eq!(*o, i * 1.05);
        }
        for j in 1..4 {
            assert_eq!(out.column(j), x().column(j));
        }
    }

    #[test]
    fn rescale_on_flag_is_spec_error() {
        let spec = PerturbationSpec {
            id: "bad".into(),
            kind: PerturbationKind::ColumnRescale {
                column: "chf".into(),
                factor: 2.0,
            },
            seed_offset: 0,
        };
        assert!(matches!(apply(&spec, &x(), 0), Err(Error::Spec(_))));
    }

    #[test]
    fn value_map_swaps_and_must_be_total() {
        let mut mapping = BTreeMap::new();
        mapping.insert("F".to_string(), "M".to_string());
        mapping.insert("M".to_string(), "F".to_string());
        let spec = PerturbationSpec {
            id: "swap".into(),
            kind: PerturbationKind::ValueMap {
                column: "sex".into(),
                mapping: mapping.clone(),
            },
            seed_offset: 0,
        };
        let out = apply(&spec, &x(), 0).unwrap();
        for (o, i) in out.column(3).iter().zip(x().column(3)) {
            assert_eq!(*o, 1.0 - i);
        }
        mapping.remove("M");
        let partial = PerturbationSpec {
            kind: PerturbationKind::ValueMap {
                column: "sex".into(),
                mapping,
            },
            ..spec
        };
        assert!(matches!(apply(&partial, &x(), 0), Err(Error::Spec(_))));
    }

    #[test]
    fn clamp_keeps_observed_range() {
        let out = apply_with(&noise(5.0), &x(), 1, true).unwrap();
        let age = out.column(0);
        assert!(age.iter().all(|v| (40.0..=89.0).contains(v)));
    }

    #[test]
    fn default_battery_shapes() {
        let cont = vec!["age".to_string(), "bmi".to_string()];
        let b = default_battery(&x(), &cont, "age", 42).unwrap();
        assert_eq!(b.specs.len(), 4);
        assert!(matches!(default_battery(&x(), &cont, "height", 42), Err(Error::Spec(_))));
        assert!(matches!(default_battery(&x(), &cont, "chf", 42), Err(Error::Spec(_))));
        let only = default_battery(&x(), &[], "age", 42).unwrap();
        assert_eq!(only.specs.len(), 2);
        assert_eq!(only.notes.len(), 1);
    }

    #[test]
    fn toml_round_trip() {
        let cont = vec!["age".to_string(), "bmi".to_string()];
        let b = default_battery(&x(), &cont, "age", 42).unwrap();
        let text = b.to_toml();
        assert_eq!(PerturbationBattery::from_toml(&text).unwrap(), b);
        let hand = r#"
master_seed = 7

[[spec]]
id = "noise"
kind = "gaussian_noise"
sigma = 0.05
seed_offset = 1

[[spec]]
id = "age"
kind = "column_rescale"
column = "age"
factor = 1.05
"#;
        let h = PerturbationBattery::from_toml(hand).unwrap();
        assert_eq!(h.specs.len(), 2);
        assert!(PerturbationBattery::from_toml("master_seed = 1\nspec = []").is_err());
    }

    #[test]
    fn row_identical_inputs_row_identical_outputs() {
        let b = default_battery(&x(), &["age".to_string(), "bmi".to_string()], "age", 3).unwrap();
        let a = b.apply_all(&x()).unwrap();
        let c = b.apply_all(&x()).unwrap();
        assert_eq!(a, c);
    }
}

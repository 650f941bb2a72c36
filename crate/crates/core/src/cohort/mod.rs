//! Cohort data model: feature matrix, labels, subgroup partitions and need
//! proxies, plus synthetic generation, CSV ingestion and stratified splitting.

mod csv_io;
mod split;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_cohort_csv, write_cohort_csv, ColumnRole, CohortSchema, LoadedCohort, SchemaColumn};
pub use split::stratified_split;
pub use synthetic::{generate_synthetic, AgeBand, CohortGenConfig, Marginal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    BinaryFlag,
    /// Integer codes into [`Column::levels`].
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Code-book for categorical columns; empty otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous,
            levels: Vec::new(),
        }
    }

    pub fn flag(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::BinaryFlag,
            levels: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            levels,
        }
    }
}

/// Dense row-major `n x d` matrix with typed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<Column>,
    values: Vec<f64>,
    n_rows: usize,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major values. Zero rows are allowed here;
    /// a [`Cohort`] additionally requires at least one.
    pub fn new(columns: Vec<Column>, values: Vec<f64>) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::Shape("feature matrix needs at least one column".into()));
        }
        if values.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                d
            )));
        }
        let n_rows = values.len() / d;
        for (j, col) in columns.iter().enumerate() {
            for i in 0..n_rows {
                let v = values[i * d + j];
                if !v.is_finite() {
                    return Err(Error::Range(format!("non-finite value in column `{}`", col.name)));
                }
                match col.kind {
                    ColumnKind::BinaryFlag if v != 0.0 && v != 1.0 => {
                        return Err(Error::Schema(format!(
                            "binary flag column `{}` holds {v}",
                            col.name
                        )));
                    }
                    ColumnKind::Categorical
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= col.levels.len() =>
                    {
                        return Err(Error::Schema(format!(
                            "categorical column `{}` holds code {v} outside its {} levels",
                            col.name,
                            col.levels.len()
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(FeatureMatrix {
            columns,
            values,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.columns.len();
        &self.values[row * d..(row + 1) * d]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, col)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replaces one column's values. Kind constraints are not re-checked,
    /// callers only write continuous columns or valid codes.
    pub(crate) fn set_column(&mut self, col: usize, data: &[f64]) {
        let d = self.columns.len();
        for (i, v) in data.iter().enumerate() {
            self.values[i * d + col] = *v;
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.columns.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            values,
            n_rows: rows.len(),
        }
    }

    /// Population standard deviation of one column.
    pub fn column_sd(&self, col: usize) -> f64 {
        let n = self.n_rows as f64;
        if self.n_rows == 0 {
            return 0.0;
        }
        let mean = (0..self.n_rows).map(|i| self.get(i, col)).sum::<f64>() / n;
        let var = (0..self.n_rows)
            .map(|i| (self.get(i, col) - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

/// A labelled partition of all cohort rows into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    levels: Vec<String>,
    codes: Vec<u32>,
}

impl Partition {
    /// Builds a partition from per-row keys; levels are the sorted distinct keys.
    pub fn from_keys<S: AsRef<str>>(keys: &[S]) -> Self {
        let mut levels: Vec<String> = keys.iter().map(|k| k.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = keys
            .iter()
            .map(|k| levels.binary_search_by(|l| l.as_str().cmp(k.as_ref())).unwrap() as u32)
            .collect();
        Partition { levels, codes }
    }

    pub fn from_codes(levels: Vec<String>, codes: Vec<u32>) -> Result<Self> {
        if let Some(c) = codes.iter().find(|&&c| c as usize >= levels.len()) {
            return Err(Error::Schema(format!("group code {c} outside {} levels", levels.len())));
        }
        Ok(Partition { levels, codes })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn key(&self, row: usize) -> &str {
        &self.levels[self.codes[row] as usize]
    }

    /// Row indices of every group, indexed by level code.
    pub fn group_rows(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.levels.len()];
        for (i, &c) in self.codes.iter().enumerate() {
            groups[c as usize].push(i);
        }
        groups
    }

    pub fn select_rows(&self, rows: &[usize]) -> Partition {
        Partition {
            levels: self.levels.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
    pub subgroups: BTreeMap<String, Partition>,
    pub need_proxies: BTreeMap<String, Vec<f64>>,
    pub row_ids: Vec<String>,
}

impl Cohort {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<u8>,
        subgroups: BTreeMap<String, Partition>,
        need_proxies: BTreeMap<String, Vec<f64>>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.n_rows();
        if n == 0 {
            return Err(Error::EmptyCohort { dropped: 0 });
        }
        if labels.len() != n || row_ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows but {} labels and {} row ids",
                labels.len(),
                row_ids.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Schema(format!("label value {l} is not binary")));
        }
        for (name, p) in &subgroups {
            if p.len() != n {
                return Err(Error::Shape(format!(
                    "subgroup `{name}` covers {} of {n} rows",
                    p.len()
                )));
            }
        }
        for (name, v) in &need_proxies {
            if v.len() != n {
                return Err(Error::Shape(format!("proxy `{name}` has {} of {n} rows", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Range(format!("proxy `{name}` has non-finite values")));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &row_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Schema(format!("duplicate row id `{id}`")));
            }
        }
        Ok(Cohort {
            features,
            labels,
            subgroups,
            need_proxies,
            row_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.n_positive() as f64 / self.n_rows() as f64
    }

    /// Label vector as `f64` 0/1 values.
    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    /// Sub-cohort restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Cohort {
        Cohort {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            subgroups: self
                .subgroups
                .iter()
                .map(|(k, p)| (k.clone(), p.select_rows(rows)))
                .collect(),
            need_proxies: self
                .need_proxies
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeatureMatrix {
        FeatureMatrix::new(
            vec![Column::continuous("a"), Column::flag("f")],
            vec![1.0, 0.0, 2.0, 1.0, 3.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn matrix_accessors() {
        let m = tiny();
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[2.0, 1.0]);
        assert_eq!(m.select_rows(&[2, 0]).column(0), vec![3.0, 1.0]);
    }

    #[test]
    fn flag_column_rejects_non_binary() {
        let err = FeatureMatrix::new(vec![Column::flag("f")], vec![0.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn categorical_code_must_be_in_codebook() {
        let col = Column::categorical("c", vec!["x".into(), "y".into()]);
        assert!(FeatureMatrix::new(vec![col.clone()], vec![0.0, 1.0]).is_ok());
        assert!(FeatureMatrix::new(vec![col], vec![2.0]).is_err());
    }

    #[test]
    fn partition_from_keys_sorts_levels() {
        let p = Partition::from_keys(&["b", "a", "b"]);
        assert_eq!(p.levels(), &["a".to_string(), "b".to_string()]);
        assert_eq!(p.codes(), &[1, 0, 1]);
        assert_eq!(p.group_rows(), vec![vec![1], vec![0, 2]]);
    }

    #[test]
    fn cohort_rejects_duplicate_ids() {
        let err = Cohort::new(
            tiny(),
            vec![0, 1, 0],
            BTreeMap::new(),
            BTreeMap::new(),
            vec!["1".into(), "2".into(), "1".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn cohort_rejects_short_partition() {
        let mut groups = BTreeMap::new();
        groups.insert("g".to_string(), Partition::from_keys(&["a", "b"]));
        let err = Cohort::new(
            tiny(),
            vec![0, 1, 0],
            groups,
            BTreeMap::new(),
            vec!["1".into(), "2".into(), "3".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}

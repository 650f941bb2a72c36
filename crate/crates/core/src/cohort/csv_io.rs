//! Cohort CSV ingestion/export and the column-role schema sidecar.
//!
//! The sidecar is itself a CSV with header `column,role,levels`. `role` is
//! one or more of `feature:continuous`, `feature:flag`,
//! `feature:categorical`, `label`, `subgroup:<attr>`, `proxy:<name>`, `id`,
//! joined by `;`. `levels` optionally fixes a categorical code-book as
//! `|`-separated values.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{Cohort, Column, ColumnKind, FeatureMatrix, Partition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRole {
    Feature(ColumnKind),
    Label,
    Subgroup(String),
    Proxy(String),
    Id,
}

impl FromStr for ColumnRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let role = match s {
            "feature:continuous" => ColumnRole::Feature(ColumnKind::Continuous),
            "feature:flag" => ColumnRole::Feature(ColumnKind::BinaryFlag),
            "feature:categorical" => ColumnRole::Feature(ColumnKind::Categorical),
            "label" => ColumnRole::Label,
            "id" => ColumnRole::Id,
            _ => match s.split_once(':') {
                Some(("subgroup", attr)) if !attr.is_empty() => ColumnRole::Subgroup(attr.to_string()),
                Some(("proxy", name)) if !name.is_empty() => ColumnRole::Proxy(name.to_string()),
                _ => return Err(Error::Schema(format!("unknown column role `{s}`"))),
            },
        };
        Ok(role)
    }
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRole::Feature(ColumnKind::Continuous) => f.write_str("feature:continuous"),
            ColumnRole::Feature(ColumnKind::BinaryFlag) => f.write_str("feature:flag"),
            ColumnRole::Feature(ColumnKind::Categorical) => f.write_str("feature:categorical"),
            ColumnRole::Label => f.write_str("label"),
            ColumnRole::Subgroup(a) => write!(f, "subgroup:{a}"),
            ColumnRole::Proxy(p) => write!(f, "proxy:{p}"),
            ColumnRole::Id => f.write_str("id"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaColumn {
    pub name: String,
    pub roles: Vec<ColumnRole>,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortSchema {
    pub columns: Vec<SchemaColumn>,
}

impl CohortSchema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut columns = Vec::new();
        for record in reader.records() {
            let record = record?;
            let name = record.get(0).unwrap_or("").to_string();
            if name.is_empty() {
                continue;
            }
            let roles = record
                .get(1)
                .ok_or_else(|| Error::Schema(format!("column `{name}` has no role")))?
                .split(';')
                .map(str::parse)
                .collect::<Result<Vec<_>>>()?;
            let levels = match record.get(2) {
                Some(l) if !l.is_empty() => l.split('|').map(str::to_string).collect(),
                _ => Vec::new(),
            };
            columns.push(SchemaColumn { name, roles, levels });
        }
        Ok(CohortSchema { columns })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["column", "role", "levels"])?;
        for c in &self.columns {
            let roles = c.roles.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
            w.write_record([c.name.as_str(), roles.as_str(), c.levels.join("|").as_str()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    /// Rows removed by complete-case filtering.
    pub dropped: usize,
    /// SHA-256 of the raw file bytes, hex encoded.
    pub content_hash: String,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL" | "?")
}

fn parse_number(cell: &str, column: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("column `{column}`: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Schema(format!("column `{column}`: non-finite value")));
    }
    Ok(v)
}

pub fn load_cohort_csv(path: &Path, schema: &CohortSchema) -> Result<LoadedCohort> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let content_hash = hex::encode(Sha256::digest(&bytes));
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let headers = reader.headers()?.clone();

    let mut index = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = headers
            .iter()
            .position(|h| h.trim() == col.name)
            .ok_or_else(|| Error::Schema(format!("declared column `{}` not in CSV header", col.name)))?;
        index.push(pos);
    }
    let label_cols: Vec<usize> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.roles.contains(&ColumnRole::Label))
        .map(|(i, _)| i)
        .collect();
    if label_cols.len() != 1 {
        return Err(Error::Schema(format!(
            "schema must name exactly one label column, found {}",
            label_cols.len()
        )));
    }
    if schema.columns.iter().filter(|c| c.roles.contains(&ColumnRole::Id)).count() > 1 {
        return Err(Error::Schema("more than one id column".into()));
    }
    if !schema
        .columns
        .iter()
        .any(|c| c.roles.iter().any(|r| matches!(r, ColumnRole::Feature(_))))
    {
        return Err(Error::Schema("schema declares no feature columns".into()));
    }

    // Complete-case pass over the selected columns.
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut line_numbers = Vec::new();
    let mut dropped = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let cells: Vec<String> = index
            .iter()
            .map(|&p| record.get(p).unwrap_or("").to_string())
            .collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        rows.push(cells);
        line_numbers.push(line + 1);
    }
    if rows.is_empty() {
        return Err(Error::EmptyCohort { dropped });
    }
    let n = rows.len();

    let mut columns = Vec::new();
    let mut feature_data: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut subgroups = BTreeMap::new();
    let mut proxies = BTreeMap::new();
    let mut row_ids: Option<Vec<String>> = None;

    for (k, col) in schema.columns.iter().enumerate() {
        let cells = || rows.iter().map(move |r| r[k].trim());
        for role in &col.roles {
            match role {
                ColumnRole::Feature(kind) => {
                    let (column, data) = parse_feature(&col.name, *kind, &col.levels, cells())?;
                    columns.push(column);
                    feature_data.push(data);
                }
                ColumnRole::Label => {
                    labels = cells()
                        .map(|c| match parse_number(c, &col.name) {
                            Ok(v) if v == 0.0 => Ok(0u8),
                            Ok(v) if v == 1.0 => Ok(1u8),
                            Ok(v) => Err(Error::Schema(format!(
                                "label column `{}` holds non-binary value {v}",
                                col.name
                            ))),
                            Err(e) => Err(e),
                        })
                        .collect::<Result<_>>()?;
                }
                ColumnRole::Subgroup(attr) => {
                    let keys: Vec<&str> = cells().collect();
                    let partition = if col.levels.is_empty() {
                        Partition::from_keys(&keys)
                    } else {
                        let codes = keys
                            .iter()
                            .map(|k| {
                                col.levels.iter().position(|l| l == k).map(|p| p as u32).ok_or_else(|| {
                                    Error::Schema(format!("column `{}`: `{k}` not in its levels", col.name))
                                })
                            })
                            .collect::<Result<_>>()?;
                        Partition::from_codes(col.levels.clone(), codes)?
                    };
                    subgroups.insert(attr.clone(), partition);
                }
                ColumnRole::Proxy(name) => {
                    let v = cells().map(|c| parse_number(c, &col.name)).collect::<Result<_>>()?;
                    proxies.insert(name.clone(), v);
                }
                ColumnRole::Id => {
                    row_ids = Some(cells().map(str::to_string).collect());
                }
            }
        }
    }

    let d = columns.len();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        values.extend(feature_data.iter().map(|c| c[i]));
    }
    let features = FeatureMatrix::new(columns, values)?;
    let row_ids = row_ids.unwrap_or_else(|| line_numbers.iter().map(|l| l.to_string()).collect());
    let cohort = Cohort::new(features, labels, subgroups, proxies, row_ids)?;
    Ok(LoadedCohort {
        cohort,
        dropped,
        content_hash,
    })
}

fn parse_feature<'a>(
    name: &str,
    kind: ColumnKind,
    levels: &[String],
    cells: impl Iterator<Item = &'a str>,
) -> Result<(Column, Vec<f64>)> {
    match kind {
        ColumnKind::Continuous => {
            let data = cells.map(|c| parse_number(c, name)).collect::<Result<_>>()?;
            Ok((Column::continuous(name), data))
        }
        ColumnKind::BinaryFlag => {
            let data = cells
                .map(|c| {
                    let v = parse_number(c, name)?;
                    if v == 0.0 || v == 1.0 {
                        Ok(v)
                    } else {
                        Err(Error::Schema(format!("flag column `{name}` holds {v}")))
                    }
                })
                .collect::<Result<_>>()?;
            Ok((Column::flag(name), data))
        }
        ColumnKind::Categorical => {
            let cells: Vec<&str> = cells.collect();
            let levels: Vec<String> = if levels.is_empty() {
                let mut l: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
                l.sort();
                l.dedup();
                l
            } else {
                levels.to_vec()
            };
            let data = cells
                .iter()
                .map(|c| {
                    levels
                        .iter()
                        .position(|l| l == c)
                        .map(|p| p as f64)
                        .ok_or_else(|| Error::Schema(format!("column `{name}`: `{c}` not in its code-book")))
                })
                .collect::<Result<_>>()?;
            Ok((Column::categorical(name, levels), data))
        }
    }
}

fn render_feature(col: &Column, v: f64) -> String {
    match col.kind {
        ColumnKind::Categorical => col.levels[v as usize].clone(),
        _ => v.to_string(),
    }
}

/// Writes `cohort` as CSV and returns the matching schema. Subgroups and
/// proxies that duplicate a same-named feature column share that column.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<CohortSchema> {
    let n = cohort.n_rows();
    let features = &cohort.features;
    let mut schema = vec![SchemaColumn {
        name: "id".into(),
        roles: vec![ColumnRole::Id],
        levels: Vec::new(),
    }];
    let mut data: Vec<Vec<String>> = vec![cohort.row_ids.clone()];
    for (j, col) in features.columns().iter().enumerate() {
        schema.push(SchemaColumn {
            name: col.name.clone(),
            roles: vec![ColumnRole::Feature(col.kind)],
            levels: col.levels.clone(),
        });
        data.push((0..n).map(|i| render_feature(col, features.get(i, j))).collect());
    }
    schema.push(SchemaColumn {
        name: "label".into(),
        roles: vec![ColumnRole::Label],
        levels: Vec::new(),
    });
    data.push(cohort.labels.iter().map(|l| l.to_string()).collect());

    let mut taken: HashSet<String> = schema.iter().map(|c| c.name.clone()).collect();
    let mut extras: Vec<(String, ColumnRole, Vec<String>, Vec<String>)> = Vec::new();
    for (attr, p) in &cohort.subgroups {
        let cells = (0..n).map(|i| p.key(i).to_string()).collect();
        extras.push((attr.clone(), ColumnRole::Subgroup(attr.clone()), cells, p.levels().to_vec()));
    }
    for (name, v) in &cohort.need_proxies {
        let cells = v.iter().map(|x| x.to_string()).collect();
        extras.push((name.clone(), ColumnRole::Proxy(name.clone()), cells, Vec::new()));
    }
    for (name, role, cells, levels) in extras {
        if let Some(pos) = schema.iter().position(|c| c.name == name) {
            // Shared column: a subgroup may only reuse a feature's code-book verbatim.
            if data[pos] == cells && (levels.is_empty() || schema[pos].levels == levels) {
                schema[pos].roles.push(role);
                continue;
            }
        }
        let prefix = match &role {
            ColumnRole::Subgroup(_) => "subgroup",
            _ => "proxy",
        };
        let mut col_name = name.clone();
        if taken.contains(&col_name) {
            col_name = format!("{prefix}.{name}");
        }
        taken.insert(col_name.clone());
        schema.push(SchemaColumn {
            name: col_name,
            roles: vec![role],
            levels,
        });
        data.push(cells);
    }

    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    w.write_record(schema.iter().map(|c| c.name.as_str()))?;
    for i in 0..n {
        w.write_record(data.iter().map(|c| c[i].as_str()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(CohortSchema { columns: schema })
}

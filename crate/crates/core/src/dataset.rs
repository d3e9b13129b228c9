//! Tabular data model for audits.
//!
//! An internal dataset carries one row per individual with the protected
//! characteristics, treatment `D`, observed outcome `Y`, binary risk
//! prediction `S` and covariates `X`. External data carries only the
//! protected characteristics and a declared subset of the covariates.
//!
//! Group labels are strings on disk and interned to level indices in
//! memory; a [`GroupKey`] is the vector of level indices.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` must be 0 or 1, found `{value}`")]
    NonBinaryValue { row: usize, column: String, value: String },
    #[error("row {row}: `{value}` is not a declared level of `{column}`")]
    UnknownLevel { row: usize, column: String, value: String },
    #[error("row {row}: column `{column}` is empty (complete cases required)")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: column `{column}` is not a number: `{value}`")]
    InvalidNumber { row: usize, column: String, value: String },
    #[error("external row {row}: level `{value}` of `{column}` does not occur in the internal schema")]
    LevelSetMismatch { row: usize, column: String, value: String },
    #[error("record {row} has {found} covariates, expected {expected}")]
    CovariateLength { row: usize, found: usize, expected: usize },
}

/// A protected characteristic and its declared level set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characteristic {
    pub name: String,
    pub levels: Vec<String>,
}

/// Column layout of the internal and external CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub characteristics: Vec<Characteristic>,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default = "default_prediction")]
    pub prediction: String,
    pub covariates: Vec<String>,
    /// Covariates present in the external data. Defaults to all covariates.
    #[serde(default)]
    pub external_covariates: Option<Vec<String>>,
}

fn default_treatment() -> String {
    "d".into()
}
fn default_outcome() -> String {
    "y".into()
}
fn default_prediction() -> String {
    "s".into()
}

/// A realized vector of protected-characteristic levels, stored as level
/// indices into the schema's level sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey(Vec<u16>);

impl GroupKey {
    pub fn new(levels: Vec<u16>) -> Self {
        GroupKey(levels)
    }

    pub fn levels(&self) -> &[u16] {
        &self.0
    }
}

impl SchemaSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: SchemaSpec = serde_json::from_str(&text).map_err(|e| DataError::Schema(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.characteristics.is_empty() {
            return Err(DataError::Schema(
                "at least one protected characteristic is required".into(),
            ));
        }
        let mut names: HashSet<&str> = HashSet::new();
        let reserved = [&self.treatment, &self.outcome, &self.prediction];
        for c in &self.characteristics {
            if c.levels.is_empty() {
                return Err(DataError::Schema(format!("`{}` has no levels", c.name)));
            }
            if c.levels.len() > u16::MAX as usize {
                return Err(DataError::Schema(format!("`{}` has too many levels", c.name)));
            }
            let distinct: HashSet<&String> = c.levels.iter().collect();
            if distinct.len() != c.levels.len() {
                return Err(DataError::Schema(format!("`{}` repeats a level", c.name)));
            }
            if !names.insert(&c.name) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        for col in reserved
            .iter()
            .map(|s| s.as_str())
            .chain(self.covariates.iter().map(|s| s.as_str()))
        {
            if !names.insert(col) {
                return Err(DataError::Schema(format!("duplicate column `{col}`")));
            }
        }
        if let Some(ext) = &self.external_covariates {
            for c in ext {
                if !self.covariates.contains(c) {
                    return Err(DataError::Schema(format!(
                        "external covariate `{c}` is not an internal covariate"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_characteristics(&self) -> usize {
        self.characteristics.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    /// Number of groups in the full cross product of level sets.
    pub fn n_groups(&self) -> usize {
        self.characteristics.iter().map(|c| c.levels.len()).product()
    }

    /// Position of `key` in [`SchemaSpec::groups`] (mixed radix, first
    /// characteristic most significant).
    pub fn group_position(&self, key: &GroupKey) -> usize {
        self.characteristics
            .iter()
            .zip(key.levels())
            .fold(0, |acc, (c, &l)| acc * c.levels.len() + l as usize)
    }

    pub fn group_at(&self, mut position: usize) -> GroupKey {
        let mut levels = vec![0u16; self.characteristics.len()];
        for (slot, c) in levels.iter_mut().zip(&self.characteristics).rev() {
            let k = c.levels.len();
            *slot = (position % k) as u16;
            position /= k;
        }
        GroupKey(levels)
    }

    /// Every group in the cross product of level sets, in position order.
    pub fn groups(&self) -> Vec<GroupKey> {
        (0..self.n_groups()).map(|i| self.group_at(i)).collect()
    }

    pub fn group_label(&self, key: &GroupKey) -> String {
        self.characteristics
            .iter()
            .zip(key.levels())
            .map(|(c, &l)| format!("{}={}", c.name, c.levels[l as usize]))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Builds a key from one label per characteristic.
    pub fn group_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<GroupKey, DataError> {
        if labels.len() != self.characteristics.len() {
            return Err(DataError::Schema(format!(
                "group needs {} labels, got {}",
                self.characteristics.len(),
                labels.len()
            )));
        }
        let mut levels = Vec::with_capacity(labels.len());
        for (c, label) in self.characteristics.iter().zip(labels) {
            let label = label.as_ref();
            let idx = c
                .levels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| DataError::UnknownLevel {
                    row: 0,
                    column: c.name.clone(),
                    value: label.to_string(),
                })?;
            levels.push(idx as u16);
        }
        Ok(GroupKey(levels))
    }

    pub fn external_covariate_names(&self) -> &[String] {
        self.external_covariates.as_deref().unwrap_or(&self.covariates)
    }

    /// Indices into the internal covariate vector of the covariates shared
    /// with the external data.
    pub fn shared_covariate_indices(&self) -> Vec<usize> {
        self.external_covariate_names()
            .iter()
            .map(|name| {
                self.covariates
                    .iter()
                    .position(|c| c == name)
                    .expect("validated subset")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub group: GroupKey,
    pub d: bool,
    pub y: bool,
    pub s: bool,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRecord {
    pub group: GroupKey,
    pub x: Vec<f64>,
}

/// Validated internal data. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditDataset {
    schema: Arc<SchemaSpec>,
    records: Vec<AuditRecord>,
    group_index: BTreeMap<GroupKey, Vec<usize>>,
}

impl AuditDataset {
    pub fn new(schema: Arc<SchemaSpec>, records: Vec<AuditRecord>) -> Result<Self, DataError> {
        schema.validate()?;
        let p = schema.n_covariates();
        let mut group_index: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            check_group(&schema, &r.group, i + 1)?;
            if r.x.len() != p {
                return Err(DataError::CovariateLength {
                    row: i + 1,
                    found: r.x.len(),
                    expected: p,
                });
            }
            group_index.entry(r.group.clone()).or_default().push(i);
        }
        Ok(AuditDataset {
            schema,
            records,
            group_index,
        })
    }

    pub fn schema(&self) -> &SchemaSpec {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<SchemaSpec> {
        Arc::clone(&self.schema)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Row indices of each group present in the data.
    pub fn group_index(&self) -> &BTreeMap<GroupKey, Vec<usize>> {
        &self.group_index
    }

    /// A new dataset built from the given rows (repeats allowed), in order.
    pub fn select(&self, rows: &[usize]) -> AuditDataset {
        let records: Vec<AuditRecord> = rows.iter().map(|&i| self.records[i].clone()).collect();
        let mut group_index: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            group_index.entry(r.group.clone()).or_default().push(i);
        }
        AuditDataset {
            schema: Arc::clone(&self.schema),
            records,
            group_index,
        }
    }

    /// `n × p` covariate matrix (no intercept column).
    pub fn covariates(&self) -> DMatrix<f64> {
        covariate_matrix(
            self.records.iter().map(|r| r.x.as_slice()),
            self.len(),
            self.schema.n_covariates(),
        )
    }

    /// Covariate matrix restricted to the covariates shared with external data.
    pub fn shared_covariates(&self) -> DMatrix<f64> {
        let idx = self.schema.shared_covariate_indices();
        DMatrix::from_fn(self.len(), idx.len(), |i, j| self.records[i].x[idx[j]])
    }

    /// Group position (see [`SchemaSpec::group_position`]) of every row.
    pub fn group_positions(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.schema.group_position(&r.group))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let schema = &self.schema;
        let mut header: Vec<&str> = schema.characteristics.iter().map(|c| c.name.as_str()).collect();
        header.extend([
            schema.treatment.as_str(),
            schema.outcome.as_str(),
            schema.prediction.as_str(),
        ]);
        header.extend(schema.covariates.iter().map(|s| s.as_str()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = schema
                .characteristics
                .iter()
                .zip(r.group.levels())
                .map(|(c, &l)| c.levels[l as usize].clone())
                .collect();
            row.extend([r.d, r.y, r.s].iter().map(|&b| u8::from(b).to_string()));
            row.extend(r.x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

fn covariate_matrix<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, p);
    for (i, x) in rows.enumerate() {
        for (j, &v) in x.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Covariate matrix of external records (shared covariates, in schema order).
pub fn external_covariates(records: &[ExternalRecord]) -> DMatrix<f64> {
    let p = records.first().map_or(0, |r| r.x.len());
    covariate_matrix(records.iter().map(|r| r.x.as_slice()), records.len(), p)
}

fn check_group(schema: &SchemaSpec, key: &GroupKey, row: usize) -> Result<(), DataError> {
    if key.levels().len() != schema.n_characteristics() {
        return Err(DataError::Schema(format!(
            "row {row}: group has {} levels, schema declares {} characteristics",
            key.levels().len(),
            schema.n_characteristics()
        )));
    }
    for (c, &l) in schema.characteristics.iter().zip(key.levels()) {
        if l as usize >= c.levels.len() {
            return Err(DataError::UnknownLevel {
                row,
                column: c.name.clone(),
                value: l.to_string(),
            });
        }
    }
    Ok(())
}

struct Columns {
    characteristics: Vec<usize>,
    covariates: Vec<usize>,
}

fn locate(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>, DataError> {
    let lookup: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    names
        .iter()
        .map(|n| {
            lookup
                .get(n)
                .copied()
                .ok_or_else(|| DataError::MissingColumn(n.to_string()))
        })
        .collect()
}

fn cell<'r>(record: &'r csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<&'r str, DataError> {
    let v = record.get(idx).map(str::trim).unwrap_or("");
    if v.is_empty() || v.eq_ignore_ascii_case("na") {
        return Err(DataError::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

fn parse_binary(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<bool, DataError> {
    match cell(record, idx, row, column)? {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DataError::NonBinaryValue {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn parse_number(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64, DataError> {
    let v = cell(record, idx, row, column)?;
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(DataError::InvalidNumber {
            row,
            column: column.to_string(),
            value: v.to_string(),
        }),
    }
}

fn parse_group(
    schema: &SchemaSpec,
    record: &csv::StringRecord,
    cols: &Columns,
    row: usize,
    external: bool,
) -> Result<GroupKey, DataError> {
    let mut levels = Vec::with_capacity(cols.characteristics.len());
    for (c, &idx) in schema.characteristics.iter().zip(&cols.characteristics) {
        let v = cell(record, idx, row, &c.name)?;
        match c.levels.iter().position(|l| l == v) {
            Some(pos) => levels.push(pos as u16),
            None if external => {
                return Err(DataError::LevelSetMismatch {
                    row,
                    column: c.name.clone(),
                    value: v.to_string(),
                })
            }
            None => {
                return Err(DataError::UnknownLevel {
                    row,
                    column: c.name.clone(),
                    value: v.to_string(),
                })
            }
        }
    }
    Ok(GroupKey(levels))
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads and validates an internal CSV file.
pub fn load_internal(path: impl AsRef<Path>, schema: Arc<SchemaSpec>) -> Result<AuditDataset, DataError> {
    read_internal(open(path.as_ref())?, schema)
}

pub fn read_internal<R: Read>(reader: R, schema: Arc<SchemaSpec>) -> Result<AuditDataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let char_names: Vec<&str> = schema.characteristics.iter().map(|c| c.name.as_str()).collect();
    let cov_names: Vec<&str> = schema.covariates.iter().map(|c| c.as_str()).collect();
    let cols = Columns {
        characteristics: locate(&headers, &char_names)?,
        covariates: locate(&headers, &cov_names)?,
    };
    let dys = locate(
        &headers,
        &[
            schema.treatment.as_str(),
            schema.outcome.as_str(),
            schema.prediction.as_str(),
        ],
    )?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let group = parse_group(&schema, &rec, &cols, row, false)?;
        let d = parse_binary(&rec, dys[0], row, &schema.treatment)?;
        let y = parse_binary(&rec, dys[1], row, &schema.outcome)?;
        let s = parse_binary(&rec, dys[2], row, &schema.prediction)?;
        let x = cols
            .covariates
            .iter()
            .zip(&cov_names)
            .map(|(&idx, name)| parse_number(&rec, idx, row, name))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(AuditRecord { group, d, y, s, x });
    }
    AuditDataset::new(schema, records)
}

/// Loads an external CSV file. Only the protected characteristics and the
/// shared covariates are read; an empty file yields no records.
pub fn load_external(path: impl AsRef<Path>, schema: &SchemaSpec) -> Result<Vec<ExternalRecord>, DataError> {
    read_external(open(path.as_ref())?, schema)
}

pub fn read_external<R: Read>(reader: R, schema: &SchemaSpec) -> Result<Vec<ExternalRecord>, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(Vec::new());
    }
    let char_names: Vec<&str> = schema.characteristics.iter().map(|c| c.name.as_str()).collect();
    let cov_names: Vec<&str> = schema.external_covariate_names().iter().map(|c| c.as_str()).collect();
    let cols = Columns {
        characteristics: locate(&headers, &char_names)?,
        covariates: locate(&headers, &cov_names)?,
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let group = parse_group(schema, &rec, &cols, row, true)?;
        let x = cols
            .covariates
            .iter()
            .zip(&cov_names)
            .map(|(&idx, name)| parse_number(&rec, idx, row, name))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ExternalRecord { group, x });
    }
    Ok(out)
}

/// Counts of each `(D, S, Y)` cell within one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCells {
    /// Indexed `[d][s][y]`.
    pub cells: [[[usize; 2]; 2]; 2],
}

impl ConfusionCells {
    pub fn get(&self, d: bool, s: bool, y: bool) -> usize {
        self.cells[d as usize][s as usize][y as usize]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().flatten().sum()
    }
}

/// Confusion-cell counts for every group of the schema (absent groups are
/// all zero).
pub fn subgroup_counts(ds: &AuditDataset) -> BTreeMap<GroupKey, ConfusionCells> {
    let mut out: BTreeMap<GroupKey, ConfusionCells> = ds
        .schema()
        .groups()
        .into_iter()
        .map(|g| (g, ConfusionCells::default()))
        .collect();
    for r in ds.records() {
        let c = out.entry(r.group.clone()).or_default();
        c.cells[r.d as usize][r.s as usize][r.y as usize] += 1;
    }
    out
}

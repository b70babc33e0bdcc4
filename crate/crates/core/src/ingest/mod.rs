//! CSV loading, min-max normalization and dataset adapters.
//!
//! The Blood Transfusion and Adult adapters describe the UCI file layouts; the
//! [`synthetic`] module writes seeded surrogates in the same layouts for use when
//! the original files are not at hand.

pub mod synthetic;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Ignored,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_max: Option<f64>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            role,
            observed_min: None,
            observed_max: None,
        }
    }

    pub fn feature(name: impl Into<String>) -> Self {
        Self::new(name, ColumnRole::Feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    /// Lines starting with this byte are skipped.
    pub comment: Option<u8>,
    /// Field value treated as missing.
    pub missing: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            delimiter: b',',
            comment: None,
            missing: "?".into(),
        }
    }
}

/// A raw feature matrix plus side metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub dataset: Dataset,
    pub columns: Vec<ColumnSpec>,
    /// One vector per label column (in column order), one entry per kept row.
    pub labels: Vec<Vec<String>>,
    /// Rows dropped for missing feature values.
    pub dropped_rows: usize,
}

impl LoadedTable {
    /// Normalizes the feature matrix and records the observed ranges on the
    /// feature columns.
    pub fn normalize(mut self) -> Result<(Dataset, Self)> {
        let (data, bounds) = normalize(&self.dataset)?;
        for (col, b) in self
            .columns
            .iter_mut()
            .filter(|c| c.role == ColumnRole::Feature)
            .zip(&bounds)
        {
            col.observed_min = Some(b.min);
            col.observed_max = Some(b.max);
        }
        Ok((data, self))
    }
}

pub fn load_csv(path: &Path, specs: &[ColumnSpec], opts: &CsvOptions) -> Result<LoadedTable> {
    load_csv_files(&[path], specs, opts)
}

/// Loads and concatenates several files sharing one layout (e.g. a train/test split).
pub fn load_csv_files(
    paths: &[&Path],
    specs: &[ColumnSpec],
    opts: &CsvOptions,
) -> Result<LoadedTable> {
    let mut acc = Accumulator::new(specs)?;
    for path in paths {
        let file = File::open(path)?;
        acc.read(file, opts)?;
    }
    let label = paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("+");
    acc.finish(label)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    specs: &[ColumnSpec],
    opts: &CsvOptions,
    source_label: &str,
) -> Result<LoadedTable> {
    let mut acc = Accumulator::new(specs)?;
    acc.read(reader, opts)?;
    acc.finish(source_label.to_string())
}

struct Accumulator<'a> {
    specs: &'a [ColumnSpec],
    n_features: usize,
    label_cols: Vec<usize>,
    points: Vec<f64>,
    labels: Vec<Vec<String>>,
    dropped: usize,
}

impl<'a> Accumulator<'a> {
    fn new(specs: &'a [ColumnSpec]) -> Result<Self> {
        let n_features = specs
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .count();
        if n_features == 0 {
            return Err(Error::InvalidInput(
                "column spec has no feature columns".into(),
            ));
        }
        let label_cols: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Label)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            specs,
            n_features,
            labels: vec![Vec::new(); label_cols.len()],
            label_cols,
            points: Vec::new(),
            dropped: 0,
        })
    }

    fn read<R: Read>(&mut self, reader: R, opts: &CsvOptions) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(opts.has_header)
            .delimiter(opts.delimiter)
            .comment(opts.comment)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut row_buf = Vec::with_capacity(self.n_features);
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            // tolerate a trailing empty field (trailing delimiter)
            let width = if record.len() == self.specs.len() + 1
                && record.get(self.specs.len()) == Some("")
            {
                self.specs.len()
            } else {
                record.len()
            };
            if width != self.specs.len() {
                return Err(Error::Parse {
                    row,
                    column: "*".into(),
                    message: format!(
                        "expected {} fields, found {}",
                        self.specs.len(),
                        record.len()
                    ),
                });
            }
            row_buf.clear();
            let mut missing = false;
            for (spec, field) in self.specs.iter().zip(record.iter()) {
                if spec.role != ColumnRole::Feature {
                    continue;
                }
                if field.is_empty() || field == opts.missing {
                    missing = true;
                    break;
                }
                let v: f64 =
                    field
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| Error::Parse {
                            row,
                            column: spec.name.clone(),
                            message: format!("'{field}': {e}"),
                        })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: spec.name.clone(),
                        message: format!("non-finite value '{field}'"),
                    });
                }
                row_buf.push(v);
            }
            if missing {
                self.dropped += 1;
                continue;
            }
            self.points.extend_from_slice(&row_buf);
            for (slot, &col) in self.labels.iter_mut().zip(&self.label_cols) {
                slot.push(record.get(col).unwrap_or_default().to_string());
            }
        }
        Ok(())
    }

    fn finish(self, source_label: String) -> Result<LoadedTable> {
        if self.points.is_empty() {
            return Err(Error::Empty(format!("no data rows in {source_label}")));
        }
        Ok(LoadedTable {
            dataset: Dataset::new(self.points, self.n_features, source_label)?,
            columns: self.specs.to_vec(),
            labels: self.labels,
            dropped_rows: self.dropped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnBounds {
    pub min: f64,
    pub max: f64,
}

/// Per-column min-max scaling to `[0, 1]`; constant columns map to `0.5`.
pub fn normalize(raw: &Dataset) -> Result<(Dataset, Vec<ColumnBounds>)> {
    let d = raw.n_dims();
    let mut bounds = vec![
        ColumnBounds {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY
        };
        d
    ];
    for row in raw.rows() {
        for (b, &v) in bounds.iter_mut().zip(row) {
            b.min = b.min.min(v);
            b.max = b.max.max(v);
        }
    }
    let mut points = Vec::with_capacity(raw.points().len());
    for row in raw.rows() {
        for (b, &v) in bounds.iter().zip(row) {
            let range = b.max - b.min;
            points.push(if range > 0.0 {
                (v - b.min) / range
            } else {
                0.5
            });
        }
    }
    let data = Dataset::new(points, d, raw.source_label())?.into_normalized()?;
    Ok((data, bounds))
}

/// Inverse of [`normalize`]; constant columns map back to their single value.
pub fn denormalize(data: &Dataset, bounds: &[ColumnBounds]) -> Result<Dataset> {
    if bounds.len() != data.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: data.n_dims(),
            got: bounds.len(),
        });
    }
    let mut points = Vec::with_capacity(data.points().len());
    for row in data.rows() {
        for (b, &v) in bounds.iter().zip(row) {
            let range = b.max - b.min;
            points.push(if range > 0.0 {
                b.min + v * range
            } else {
                b.min
            });
        }
    }
    Dataset::new(points, data.n_dims(), data.source_label())
}

/// Known dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// UCI Blood Transfusion Service Center (`transfusion.data`).
    Blood,
    /// UCI Adult (`adult.data`, `adult.test`), six continuous attributes.
    Adult,
    /// Every column is a numeric feature.
    Numeric,
}

impl Schema {
    pub fn default_k(&self) -> Option<usize> {
        match self {
            Schema::Blood => Some(2),
            Schema::Adult => Some(5),
            Schema::Numeric => None,
        }
    }

    pub fn csv_options(&self, has_header: bool) -> CsvOptions {
        match self {
            Schema::Blood => CsvOptions {
                has_header: true,
                ..CsvOptions::default()
            },
            Schema::Adult => CsvOptions {
                has_header: false,
                comment: Some(b'|'),
                ..CsvOptions::default()
            },
            Schema::Numeric => CsvOptions {
                has_header,
                ..CsvOptions::default()
            },
        }
    }
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blood" => Ok(Schema::Blood),
            "adult" => Ok(Schema::Adult),
            "numeric" => Ok(Schema::Numeric),
            other => Err(Error::InvalidInput(format!("unknown schema '{other}'"))),
        }
    }
}

pub fn blood_columns() -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::feature("recency_months"),
        ColumnSpec::feature("frequency_times"),
        ColumnSpec::feature("monetary_cc"),
        ColumnSpec::feature("time_months"),
        ColumnSpec::new("donated_march_2007", ColumnRole::Label),
    ]
}

pub fn adult_columns() -> Vec<ColumnSpec> {
    use ColumnRole::*;
    [
        ("age", Feature),
        ("workclass", Ignored),
        ("fnlwgt", Feature),
        ("education", Ignored),
        ("education-num", Feature),
        ("marital-status", Ignored),
        ("occupation", Ignored),
        ("relationship", Ignored),
        ("race", Label),
        ("sex", Ignored),
        ("capital-gain", Feature),
        ("capital-loss", Feature),
        ("hours-per-week", Feature),
        ("native-country", Ignored),
        ("income", Label),
    ]
    .into_iter()
    .map(|(n, r)| ColumnSpec::new(n, r))
    .collect()
}

/// Loads files with a known schema. For [`Schema::Numeric`] the column count is
/// taken from the first data line.
pub fn load_schema(schema: Schema, paths: &[&Path], has_header: bool) -> Result<LoadedTable> {
    let opts = schema.csv_options(has_header);
    let specs = match schema {
        Schema::Blood => blood_columns(),
        Schema::Adult => adult_columns(),
        Schema::Numeric => {
            let first = paths
                .first()
                .ok_or_else(|| Error::InvalidInput("no dataset path".into()))?;
            let width = sniff_width(first, &opts)?;
            (0..width)
                .map(|i| ColumnSpec::feature(format!("x{i}")))
                .collect()
        }
    };
    load_csv_files(paths, &specs, &opts)
}

fn sniff_width(path: &Path, opts: &CsvOptions) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(opts.delimiter)
        .comment(opts.comment)
        .flexible(true)
        .from_reader(File::open(path)?);
    match rdr.records().next() {
        Some(r) => Ok(r?.len()),
        None => Err(Error::Empty(format!("no data rows in {}", path.display()))),
    }
}

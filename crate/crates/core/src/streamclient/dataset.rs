use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::StreamError;
use crate::trainworker::train_count;

/// Categorical value tables, per column: `column -> (category -> number)`.
pub type Mappings = HashMap<String, HashMap<String, f64>>;

/// Parses `col=k:v,k:v` into one mapping entry.
pub fn parse_mapping(arg: &str) -> Result<(String, HashMap<String, f64>), String> {
    let (col, pairs) = arg
        .split_once('=')
        .ok_or_else(|| format!("mapping {arg:?} is not of the form col=key:value,..."))?;
    let mut table = HashMap::new();
    for pair in pairs.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .rsplit_once(':')
            .ok_or_else(|| format!("mapping entry {pair:?} is not key:value"))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("mapping value {v:?} is not a number"))?;
        table.insert(k.trim().to_string(), v);
    }
    Ok((col.trim().to_string(), table))
}

/// Numeric rows ready for encoding, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    feature_columns: &[String],
    label_column: &str,
    mappings: &Mappings,
) -> Result<Dataset, StreamError> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, feature_columns, label_column, mappings)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    feature_columns: &[String],
    label_column: &str,
    mappings: &Mappings,
) -> Result<Dataset, StreamError> {
    read_table(reader, feature_columns, Some(label_column), mappings)
}

/// Feature rows only, for inference input. A label column, if present, is
/// ignored.
pub fn ingest_features(
    path: impl AsRef<Path>,
    feature_columns: &[String],
    mappings: &Mappings,
) -> Result<Vec<Vec<f64>>, StreamError> {
    let file = std::fs::File::open(path.as_ref())?;
    Ok(read_table(file, feature_columns, None, mappings)?.features)
}

fn read_table<R: Read>(
    reader: R,
    feature_columns: &[String],
    label_column: Option<&str>,
    mappings: &Mappings,
) -> Result<Dataset, StreamError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StreamError::MissingColumn(name.to_string()))
    };
    let feature_idx = feature_columns
        .iter()
        .map(|c| index(c))
        .collect::<Result<Vec<_>, _>>()?;
    let label_idx = label_column.map(index).transpose()?;

    let mut ds = Dataset {
        feature_columns: feature_columns.to_vec(),
        label_column: label_column.unwrap_or_default().to_string(),
        ..Dataset::default()
    };
    for (i, rec) in rdr.records().enumerate() {
        // 1-based, counting the header as line 1
        let row = i + 2;
        let rec = rec.map_err(|e| StreamError::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let cell = |col: usize, name: &str| -> Result<f64, StreamError> {
            let raw = rec.get(col).unwrap_or_default();
            if let Some(v) = mappings.get(name).and_then(|m| m.get(raw)) {
                return Ok(*v);
            }
            raw.parse::<f64>()
                .map_err(|_| StreamError::UnmappedCategory {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        let features = feature_idx
            .iter()
            .zip(feature_columns)
            .map(|(c, n)| cell(*c, n))
            .collect::<Result<Vec<_>, _>>()?;
        if let (Some(c), Some(name)) = (label_idx, label_column) {
            ds.labels.push(cell(c, name)?);
        }
        ds.features.push(features);
    }
    Ok(ds)
}

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Statistics over `rows`, population variance. Constant columns get a
    /// unit scale so they are only centered.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; cols];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Standardizes every row with statistics of the training head only, so the
/// evaluation tail never leaks into them.
pub fn standardize(ds: &mut Dataset, validation_rate: f64) -> Standardization {
    let head = train_count(ds.len(), validation_rate);
    let stats = Standardization::fit(&ds.features[..head]);
    for row in &mut ds.features {
        stats.apply(row);
    }
    stats
}

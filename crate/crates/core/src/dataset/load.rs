use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMeta, TabularDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ColumnKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

fn default_missing() -> Vec<String> {
    ["", "?", "NA", "NaN", "nan", "null"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Schema for one CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// CSV path; relative paths are resolved against the config file's directory.
    pub csv: PathBuf,
    pub label_column: String,
    /// Raw label string → class. When absent, labels must parse as 0 or 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_mapping: Option<BTreeMap<String, u8>>,
    pub target_description: String,
    /// Per-column kind and description. Unlisted columns are numeric when
    /// every present cell parses as a number, categorical otherwise.
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnConfig>,
    /// Precomputed feature selection; columns are kept in this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_features: Option<Vec<String>>,
    #[serde(default = "default_missing")]
    pub missing_values: Vec<String>,
}

impl DatasetConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: DatasetConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.csv.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.csv = dir.join(&cfg.csv);
            }
        }
        Ok(cfg)
    }

    pub fn load(&self) -> Result<RawDataset> {
        load_csv(&self.csv, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawValues {
    pub fn len(&self) -> usize {
        match self {
            RawValues::Numeric(v) => v.len(),
            RawValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub meta: FeatureMeta,
    pub values: RawValues,
}

/// A dataset as read from disk: categorical columns are still strings and
/// missing cells are still missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
    pub target_description: String,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.meta.name == name)
    }

    /// Wraps an already preprocessed dataset so it can be fed through
    /// preprocessing again. Indicator columns keep their one-hot kind.
    pub fn from_tabular(ds: &TabularDataset) -> Self {
        let columns = ds
            .features
            .iter()
            .enumerate()
            .map(|(j, meta)| RawColumn {
                meta: meta.clone(),
                values: RawValues::Numeric(ds.x.column(j).iter().map(|&v| Some(v)).collect()),
            })
            .collect();
        RawDataset {
            name: ds.name.clone(),
            columns,
            labels: ds.labels.clone(),
            target_description: ds.target_description.clone(),
        }
    }
}

fn parse_label(raw: &str, row: usize, cfg: &DatasetConfig) -> Result<u8> {
    let value = raw.trim();
    let unknown = || Error::UnknownLabel {
        row,
        value: value.to_string(),
    };
    match &cfg.label_mapping {
        Some(map) => match map.get(value) {
            Some(&c) if c <= 1 => Ok(c),
            Some(_) => Err(Error::Config(format!(
                "label mapping for `{value}` must be 0 or 1"
            ))),
            None => Err(unknown()),
        },
        None => match value.parse::<f64>() {
            Ok(0.0) => Ok(0),
            Ok(1.0) => Ok(1),
            _ => Err(unknown()),
        },
    }
}

/// Reads a CSV file with a header row according to `cfg`.
pub fn load_csv(path: &Path, cfg: &DatasetConfig) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile);
    }
    let label_idx = headers
        .iter()
        .position(|h| *h == cfg.label_column)
        .ok_or_else(|| Error::MissingColumn(cfg.label_column.clone()))?;

    let feature_cols: Vec<usize> = match &cfg.selected_features {
        Some(sel) => sel
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .filter(|&i| i != label_idx)
                    .ok_or_else(|| Error::MissingColumn(name.clone()))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_idx).collect(),
    };

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); feature_cols.len()];
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        labels.push(parse_label(record.get(label_idx).unwrap_or(""), row, cfg)?);
        for (k, &c) in feature_cols.iter().enumerate() {
            let v = record.get(c).unwrap_or("");
            cells[k].push(if cfg.missing_values.iter().any(|m| m == v) {
                None
            } else {
                Some(v.to_string())
            });
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyFile);
    }

    let columns = feature_cols
        .iter()
        .zip(cells)
        .map(|(&c, values)| build_column(&headers[c], values, cfg))
        .collect::<Result<Vec<_>>>()?;

    Ok(RawDataset {
        name: cfg.name.clone(),
        columns,
        labels,
        target_description: cfg.target_description.clone(),
    })
}

fn build_column(name: &str, values: Vec<Option<String>>, cfg: &DatasetConfig) -> Result<RawColumn> {
    let col_cfg = cfg.columns.get(name).cloned().unwrap_or_default();
    let kind = col_cfg.kind.unwrap_or_else(|| {
        let all_numeric = values
            .iter()
            .flatten()
            .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite));
        if all_numeric {
            ColumnKind::Numeric
        } else {
            ColumnKind::Categorical
        }
    });
    let (kind, values) = match kind {
        ColumnKind::Numeric => {
            let parsed = values
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    None => Ok(None),
                    Some(s) => s
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Some)
                        .ok_or_else(|| Error::BadNumber {
                            row: i + 1,
                            column: name.to_string(),
                            value: s,
                        }),
                })
                .collect::<Result<Vec<_>>>()?;
            (FeatureKind::Numeric, RawValues::Numeric(parsed))
        }
        ColumnKind::Categorical => (FeatureKind::Categorical, RawValues::Categorical(values)),
    };
    Ok(RawColumn {
        meta: FeatureMeta {
            name: name.to_string(),
            description: col_cfg.description,
            kind,
            source_column: name.to_string(),
        },
        values,
    })
}

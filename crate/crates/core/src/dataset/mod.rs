//! Tabular datasets: CSV loading, preprocessing and covariate-shift splits.

mod load;
mod preprocess;
mod split;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use load::{
    load_csv, ColumnConfig, ColumnKind, DatasetConfig, RawColumn, RawDataset, RawValues,
};
pub use preprocess::{preprocess, ColumnTransform, PreprocessOptions, Preprocessor};
pub use split::{
    apply_split, build_split, enumerate_splits, EvalMode, ShiftStrategy, SplitConfig, SplitSpec,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    /// Indicator column expanded from a categorical source column.
    #[serde(rename = "onehot")]
    OneHot {
        category: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub source_column: String,
}

impl FeatureMeta {
    pub fn numeric(name: impl Into<String>) -> Self {
        let name = name.into();
        FeatureMeta {
            source_column: name.clone(),
            name,
            description: None,
            kind: FeatureKind::Numeric,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    /// Text used in prompts: the description when present and enabled,
    /// otherwise the name.
    pub fn prompt_text(&self, use_description: bool) -> &str {
        match &self.description {
            Some(d) if use_description && !d.trim().is_empty() => d,
            _ => &self.name,
        }
    }
}

/// A preprocessed, fully numeric dataset with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    /// n × d design matrix (no intercept column).
    pub x: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub features: Vec<FeatureMeta>,
    pub target_description: String,
}

impl TabularDataset {
    pub fn new(
        name: impl Into<String>,
        x: DMatrix<f64>,
        labels: Vec<u8>,
        features: Vec<FeatureMeta>,
        target_description: impl Into<String>,
    ) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if x.ncols() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: features.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::UnknownLabel {
                row: i + 1,
                value: labels[i].to_string(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
        }
        Ok(TabularDataset {
            name: name.into(),
            x,
            labels,
            features,
            target_description: target_description.into(),
        })
    }

    /// Builds a dataset of numeric features named `x0, x1, …` from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let features = (0..d)
            .map(|j| FeatureMeta::numeric(format!("x{j}")))
            .collect();
        TabularDataset::new("synthetic", x, labels, features, "outcome")
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    /// Rows where `mask` is true, in original order.
    pub fn subset(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows(),
                got: mask.len(),
            });
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let x = self.x.select_rows(rows.iter());
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Ok(TabularDataset {
            name: self.name.clone(),
            x,
            labels,
            features: self.features.clone(),
            target_description: self.target_description.clone(),
        })
    }
}

use std::collections::BTreeSet;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMeta, RawDataset, RawValues, TabularDataset};
use crate::error::{Error, Result};

/// Category used for missing categorical cells.
pub const MISSING_CATEGORY: &str = "missing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub standardize: bool,
    /// Rows whose statistics define the standardization. All rows when absent.
    #[serde(default, skip)]
    pub fit_mask: Option<Vec<bool>>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            standardize: true,
            fit_mask: None,
        }
    }
}

/// Recorded transform for one raw column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ColumnTransform {
    /// `(x - center) / scale`, missing cells become 0.
    Numeric {
        meta: FeatureMeta,
        center: f64,
        scale: f64,
    },
    /// Already-encoded indicator column, copied through.
    Passthrough {
        meta: FeatureMeta,
    },
    OneHot {
        meta: FeatureMeta,
        categories: Vec<String>,
    },
    Dropped {
        column: String,
    },
}

/// Fitted preprocessing parameters, reusable on other row sets with the same columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<ColumnTransform>,
}

impl Preprocessor {
    pub fn fit(raw: &RawDataset, opts: &PreprocessOptions) -> Result<Self> {
        let n = raw.n_rows();
        if let Some(mask) = &opts.fit_mask {
            if mask.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: mask.len(),
                });
            }
        }
        let in_fit = |i: usize| opts.fit_mask.as_ref().is_none_or(|m| m[i]);

        let columns = raw
            .columns
            .iter()
            .map(|col| match &col.values {
                RawValues::Numeric(_) if matches!(col.meta.kind, FeatureKind::OneHot { .. }) => {
                    ColumnTransform::Passthrough {
                        meta: col.meta.clone(),
                    }
                }
                RawValues::Numeric(values) => {
                    let fit: Vec<f64> = values
                        .iter()
                        .enumerate()
                        .filter_map(|(i, v)| v.filter(|_| in_fit(i)))
                        .collect();
                    let (center, scale) = if opts.standardize && !fit.is_empty() {
                        let mean = crate::math::mean(&fit);
                        let std = crate::math::population_std(&fit);
                        (mean, if std > 0.0 { std } else { 1.0 })
                    } else {
                        (0.0, 1.0)
                    };
                    ColumnTransform::Numeric {
                        meta: FeatureMeta {
                            kind: FeatureKind::Numeric,
                            ..col.meta.clone()
                        },
                        center,
                        scale,
                    }
                }
                RawValues::Categorical(values) => {
                    let categories: BTreeSet<&str> = values
                        .iter()
                        .map(|v| v.as_deref().unwrap_or(MISSING_CATEGORY))
                        .collect();
                    if categories.len() < 2 {
                        warn!(
                            target: "preprocess",
                            "dropping categorical column `{}` with a single value",
                            col.meta.name
                        );
                        ColumnTransform::Dropped {
                            column: col.meta.name.clone(),
                        }
                    } else {
                        ColumnTransform::OneHot {
                            meta: col.meta.clone(),
                            categories: categories.into_iter().map(str::to_string).collect(),
                        }
                    }
                }
            })
            .collect();
        Ok(Preprocessor { columns })
    }

    pub fn output_features(&self) -> Vec<FeatureMeta> {
        let mut out = Vec::new();
        for t in &self.columns {
            match t {
                ColumnTransform::Numeric { meta, .. } | ColumnTransform::Passthrough { meta } => {
                    out.push(meta.clone())
                }
                ColumnTransform::OneHot { meta, categories } => {
                    let base = meta.description.as_deref().unwrap_or(&meta.name);
                    for cat in categories {
                        out.push(FeatureMeta {
                            name: format!("{}={}", meta.name, cat),
                            description: Some(format!("{base} = {cat}")),
                            kind: FeatureKind::OneHot {
                                category: cat.clone(),
                            },
                            source_column: meta.name.clone(),
                        });
                    }
                }
                ColumnTransform::Dropped { .. } => {}
            }
        }
        out
    }

    pub fn transform(&self, raw: &RawDataset) -> Result<TabularDataset> {
        let n = raw.n_rows();
        let features = self.output_features();
        let mut x = DMatrix::zeros(n, features.len());
        let mut j = 0;
        for t in &self.columns {
            let name = match t {
                ColumnTransform::Numeric { meta, .. }
                | ColumnTransform::Passthrough { meta }
                | ColumnTransform::OneHot { meta, .. } => &meta.name,
                ColumnTransform::Dropped { .. } => continue,
            };
            let col = raw
                .column(name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?;
            match (t, &col.values) {
                (ColumnTransform::Numeric { center, scale, .. }, RawValues::Numeric(v)) => {
                    for (i, cell) in v.iter().enumerate() {
                        x[(i, j)] = cell.map_or(0.0, |c| (c - center) / scale);
                    }
                    j += 1;
                }
                (ColumnTransform::Passthrough { .. }, RawValues::Numeric(v)) => {
                    for (i, cell) in v.iter().enumerate() {
                        x[(i, j)] = cell.unwrap_or(0.0);
                    }
                    j += 1;
                }
                (ColumnTransform::OneHot { categories, .. }, RawValues::Categorical(v)) => {
                    for (i, cell) in v.iter().enumerate() {
                        let c = cell.as_deref().unwrap_or(MISSING_CATEGORY);
                        if let Some(k) = categories.iter().position(|cat| cat == c) {
                            x[(i, j + k)] = 1.0;
                        }
                    }
                    j += categories.len();
                }
                _ => {
                    return Err(Error::Config(format!(
                        "column `{name}` changed type since preprocessing was fitted"
                    )))
                }
            }
        }
        TabularDataset::new(
            raw.name.clone(),
            x,
            raw.labels.clone(),
            features,
            raw.target_description.clone(),
        )
    }
}

/// One-hot encodes categorical columns, zero-imputes missing numerics and
/// optionally z-scores numeric columns on the fitting subset.
pub fn preprocess(
    raw: &RawDataset,
    opts: &PreprocessOptions,
) -> Result<(TabularDataset, Preprocessor)> {
    let pre = Preprocessor::fit(raw, opts)?;
    let ds = pre.transform(raw)?;
    Ok((ds, pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RawColumn;
    use proptest::prelude::*;

    fn raw(columns: Vec<RawColumn>, labels: Vec<u8>) -> RawDataset {
        RawDataset {
            name: "t".into(),
            columns,
            labels,
            target_description: "risk".into(),
        }
    }

    fn numeric(name: &str, v: Vec<Option<f64>>) -> RawColumn {
        RawColumn {
            meta: FeatureMeta::numeric(name),
            values: RawValues::Numeric(v),
        }
    }

    fn categorical(name: &str, v: &[Option<&str>]) -> RawColumn {
        RawColumn {
            meta: FeatureMeta {
                kind: FeatureKind::Categorical,
                ..FeatureMeta::numeric(name)
            },
            values: RawValues::Categorical(v.iter().map(|c| c.map(str::to_string)).collect()),
        }
    }

    #[test]
    fn one_hot_two_categories() {
        let r = raw(
            vec![categorical("sex", &[Some("M"), Some("F"), Some("M")])],
            vec![0, 1, 0],
        );
        let (ds, _) = preprocess(&r, &PreprocessOptions::default()).unwrap();
        let names: Vec<_> = ds.features.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["sex=F", "sex=M"]);
        assert_eq!(ds.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(ds.column(1), vec![1.0, 0.0, 1.0]);
        assert_eq!(ds.features[1].source_column, "sex");
        assert_eq!(ds.features[1].description.as_deref(), Some("sex = M"));
    }

    #[test]
    fn missing_category_gets_own_indicator() {
        let r = raw(
            vec![categorical("cp", &[Some("a"), None, Some("b")])],
            vec![0, 1, 0],
        );
        let (ds, _) = preprocess(&r, &PreprocessOptions::default()).unwrap();
        assert!(ds.feature_index("cp=missing").is_some());
    }

    #[test]
    fn single_value_categorical_is_dropped() {
        let r = raw(
            vec![
                categorical("c", &[Some("a"), Some("a")]),
                numeric("x", vec![Some(1.0), Some(2.0)]),
            ],
            vec![0, 1],
        );
        let (ds, pre) = preprocess(&r, &PreprocessOptions::default()).unwrap();
        assert_eq!(ds.n_features(), 1);
        assert!(matches!(pre.columns[0], ColumnTransform::Dropped { .. }));
    }

    #[test]
    fn missing_numeric_becomes_zero() {
        let r = raw(
            vec![numeric("x", vec![Some(4.0), None, Some(8.0)])],
            vec![0, 1, 0],
        );
        for standardize in [false, true] {
            let (ds, _) = preprocess(
                &r,
                &PreprocessOptions {
                    standardize,
                    fit_mask: None,
                },
            )
            .unwrap();
            assert_eq!(ds.x[(1, 0)], 0.0);
        }
    }

    #[test]
    fn standardize_one_two_three() {
        let r = raw(
            vec![numeric("x", vec![Some(1.0), Some(2.0), Some(3.0)])],
            vec![0, 1, 0],
        );
        let (ds, _) = preprocess(&r, &PreprocessOptions::default()).unwrap();
        // sqrt(3/2)
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in ds.column(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn standardize_uses_fit_mask() {
        let r = raw(
            vec![numeric(
                "x",
                vec![Some(1.0), Some(2.0), Some(3.0), Some(100.0)],
            )],
            vec![0, 1, 0, 1],
        );
        let opts = PreprocessOptions {
            standardize: true,
            fit_mask: Some(vec![true, true, true, false]),
        };
        let (ds, _) = preprocess(&r, &opts).unwrap();
        assert!((ds.x[(1, 0)]).abs() < 1e-15);
        assert!((ds.x[(3, 0)] - 98.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_keeps_zero() {
        let r = raw(vec![numeric("x", vec![Some(5.0); 3])], vec![0, 1, 0]);
        let (ds, _) = preprocess(&r, &PreprocessOptions::default()).unwrap();
        assert!(ds.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_mask_length_checked() {
        let r = raw(vec![numeric("x", vec![Some(1.0); 3])], vec![0, 1, 0]);
        let opts = PreprocessOptions {
            standardize: true,
            fit_mask: Some(vec![true]),
        };
        assert!(preprocess(&r, &opts).is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(
            xs in proptest::collection::vec(-50.0f64..50.0, 4..30),
            cats in proptest::collection::vec(0usize..3, 4..30),
        ) {
            let n = xs.len().min(cats.len());
            let names = ["a", "b", "c"];
            let r = raw(
                vec![
                    numeric("x", xs[..n].iter().map(|&v| Some(v)).collect()),
                    categorical("c", &cats[..n].iter().map(|&k| Some(names[k])).collect::<Vec<_>>()),
                ],
                (0..n).map(|i| (i % 2) as u8).collect(),
            );
            let (once, pre) = preprocess(&r, &PreprocessOptions::default()).unwrap();
            // Re-applying recorded parameters is deterministic.
            prop_assert_eq!(&pre.transform(&r).unwrap(), &once);
            // Preprocessing preprocessed data changes nothing.
            let (twice, _) = preprocess(&RawDataset::from_tabular(&once), &PreprocessOptions::default()).unwrap();
            prop_assert_eq!(&twice.features, &once.features);
            for (a, b) in twice.x.iter().zip(once.x.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn one_hot_argmax_recovers_category(cats in proptest::collection::vec(0usize..4, 2..40)) {
            let names = ["w", "x", "y", "z"];
            let cells: Vec<Option<&str>> = cats.iter().map(|&k| Some(names[k])).collect();
            let n = cells.len();
            let r = raw(vec![categorical("c", &cells)], vec![0; n]);
            let (ds, _) = preprocess(&r, &PreprocessOptions::default()).unwrap();
            prop_assert_eq!(ds.n_rows(), n);
            if ds.n_features() == 0 {
                // single category: column dropped
                prop_assert!(cats.iter().all(|&k| k == cats[0]));
            } else {
                for (i, cell) in cells.iter().enumerate() {
                    let row: Vec<f64> = ds.x.row(i).iter().copied().collect();
                    let k = row.iter().position(|&v| v == 1.0).unwrap();
                    prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                    let cat = match &ds.features[k].kind {
                        FeatureKind::OneHot { category } => category.clone(),
                        _ => unreachable!(),
                    };
                    prop_assert_eq!(Some(cat.as_str()), *cell);
                }
            }
        }
    }
}

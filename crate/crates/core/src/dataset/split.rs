use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, TabularDataset};
use crate::error::{Error, Result};
use crate::math::quantile_sorted;

/// Quantile-based covariate-shift strategy for choosing training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShiftStrategy {
    #[serde(rename = "extreme_10")]
    Extreme10,
    #[serde(rename = "extreme_5_95")]
    Extreme5_95,
    #[serde(rename = "moderate_20_80")]
    Moderate20_80,
    #[serde(rename = "tail_0_50")]
    Tail0_50,
    #[serde(rename = "tail_50_100")]
    Tail50_100,
}

impl ShiftStrategy {
    pub const ALL: [ShiftStrategy; 5] = [
        ShiftStrategy::Extreme10,
        ShiftStrategy::Extreme5_95,
        ShiftStrategy::Moderate20_80,
        ShiftStrategy::Tail0_50,
        ShiftStrategy::Tail50_100,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftStrategy::Extreme10 => "extreme_10",
            ShiftStrategy::Extreme5_95 => "extreme_5_95",
            ShiftStrategy::Moderate20_80 => "moderate_20_80",
            ShiftStrategy::Tail0_50 => "tail_0_50",
            ShiftStrategy::Tail50_100 => "tail_50_100",
        }
    }

    /// Training quantile range `[lower, upper]`.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            ShiftStrategy::Extreme10 => (0.0, 0.10),
            ShiftStrategy::Extreme5_95 => (0.0, 0.05),
            ShiftStrategy::Moderate20_80 => (0.20, 0.80),
            ShiftStrategy::Tail0_50 => (0.0, 0.50),
            ShiftStrategy::Tail50_100 => (0.50, 1.0),
        }
    }
}

impl fmt::Display for ShiftStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftStrategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown shift strategy `{s}`")))
    }
}

/// Which rows a fitted model is scored on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Entire,
    Complement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub min_samples: usize,
    pub eval: EvalMode,
    pub strategies: Vec<ShiftStrategy>,
    /// Per-strategy overrides of the training quantile range.
    pub ranges: BTreeMap<ShiftStrategy, (f64, f64)>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_samples: 50,
            eval: EvalMode::Entire,
            strategies: ShiftStrategy::ALL.to_vec(),
            ranges: BTreeMap::new(),
        }
    }
}

impl SplitConfig {
    pub fn range(&self, strategy: ShiftStrategy) -> (f64, f64) {
        self.ranges
            .get(&strategy)
            .copied()
            .unwrap_or_else(|| strategy.default_range())
    }
}

/// A training subset defined by a quantile interval of one shift feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SplitRecord", try_from = "SplitRecord")]
pub struct SplitSpec {
    pub strategy: ShiftStrategy,
    pub shift_feature: String,
    pub lower_q: f64,
    pub upper_q: f64,
    /// Feature values at `lower_q` and `upper_q`.
    pub lower_value: f64,
    pub upper_value: f64,
    pub train_mask: Vec<bool>,
}

impl SplitSpec {
    pub fn train_size(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        (0..self.train_mask.len())
            .filter(|&i| self.train_mask[i])
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    strategy: ShiftStrategy,
    feature: String,
    lower_q: f64,
    upper_q: f64,
    lower_value: f64,
    upper_value: f64,
    n_rows: usize,
    train_rows: Vec<usize>,
}

impl From<SplitSpec> for SplitRecord {
    fn from(s: SplitSpec) -> Self {
        SplitRecord {
            strategy: s.strategy,
            train_rows: s.train_rows(),
            n_rows: s.train_mask.len(),
            feature: s.shift_feature,
            lower_q: s.lower_q,
            upper_q: s.upper_q,
            lower_value: s.lower_value,
            upper_value: s.upper_value,
        }
    }
}

impl TryFrom<SplitRecord> for SplitSpec {
    type Error = String;

    fn try_from(r: SplitRecord) -> std::result::Result<Self, String> {
        if r.lower_q >= r.upper_q {
            return Err(format!(
                "lower_q {} must be below upper_q {}",
                r.lower_q, r.upper_q
            ));
        }
        let mut train_mask = vec![false; r.n_rows];
        for i in r.train_rows {
            *train_mask
                .get_mut(i)
                .ok_or_else(|| format!("train row {i} out of range for {} rows", r.n_rows))? = true;
        }
        Ok(SplitSpec {
            strategy: r.strategy,
            shift_feature: r.feature,
            lower_q: r.lower_q,
            upper_q: r.upper_q,
            lower_value: r.lower_value,
            upper_value: r.upper_value,
            train_mask,
        })
    }
}

/// Builds the split for one (feature, strategy) pair without eligibility filtering.
pub fn build_split(
    ds: &TabularDataset,
    feature: &str,
    strategy: ShiftStrategy,
    range: (f64, f64),
) -> Result<SplitSpec> {
    let (lower_q, upper_q) = range;
    if !(0.0..=1.0).contains(&lower_q) || !(0.0..=1.0).contains(&upper_q) || lower_q >= upper_q {
        return Err(Error::Config(format!(
            "invalid quantile range [{lower_q}, {upper_q}] for {strategy}"
        )));
    }
    let j = ds
        .feature_index(feature)
        .ok_or_else(|| Error::MissingColumn(feature.to_string()))?;
    let values = ds.column(j);
    if values.is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let lower_value = quantile_sorted(&sorted, lower_q);
    let upper_value = quantile_sorted(&sorted, upper_q);
    let train_mask = values
        .iter()
        .map(|&v| v >= lower_value && v <= upper_value)
        .collect();
    Ok(SplitSpec {
        strategy,
        shift_feature: feature.to_string(),
        lower_q,
        upper_q,
        lower_value,
        upper_value,
        train_mask,
    })
}

fn eval_mask(spec: &SplitSpec, mode: EvalMode) -> Vec<bool> {
    match mode {
        EvalMode::Entire => vec![true; spec.train_mask.len()],
        EvalMode::Complement => spec.train_mask.iter().map(|m| !m).collect(),
    }
}

fn both_classes(labels: &[u8], mask: &[bool]) -> bool {
    let mut seen = [false; 2];
    for (l, _) in labels.iter().zip(mask).filter(|(_, &m)| m) {
        seen[usize::from(*l)] = true;
    }
    seen[0] && seen[1]
}

/// Every admissible split of `ds`: numeric features with at least two
/// distinct values, in column order, each crossed with the configured
/// strategies. Splits below `min_samples` or lacking either class in the
/// training or evaluation rows are dropped.
pub fn enumerate_splits(ds: &TabularDataset, cfg: &SplitConfig) -> Vec<SplitSpec> {
    let mut out = Vec::new();
    for (j, meta) in ds.features.iter().enumerate() {
        if meta.kind != FeatureKind::Numeric {
            continue;
        }
        let col = ds.column(j);
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        for &strategy in &cfg.strategies {
            let Ok(spec) = build_split(ds, &meta.name, strategy, cfg.range(strategy)) else {
                continue;
            };
            if spec.train_size() < cfg.min_samples
                || !both_classes(&ds.labels, &spec.train_mask)
                || !both_classes(&ds.labels, &eval_mask(&spec, cfg.eval))
            {
                continue;
            }
            out.push(spec);
        }
    }
    out
}

/// Returns `(train, eval)`. With [`EvalMode::Entire`] the evaluation set is
/// the whole dataset, not the complement of the training rows.
pub fn apply_split(
    ds: &TabularDataset,
    spec: &SplitSpec,
    mode: EvalMode,
) -> Result<(TabularDataset, TabularDataset)> {
    if spec.train_mask.len() != ds.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_rows(),
            got: spec.train_mask.len(),
        });
    }
    let train = ds.subset(&spec.train_mask)?;
    let eval = match mode {
        EvalMode::Entire => ds.clone(),
        EvalMode::Complement => ds.subset(&eval_mask(spec, mode))?,
    };
    Ok((train, eval))
}

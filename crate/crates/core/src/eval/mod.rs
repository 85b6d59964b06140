//! Metrics, experiment orchestration, hyperparameter sweeps and reporting.

mod experiment;
mod metrics;
mod report;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ShiftStrategy, SplitSpec};
use crate::error::Error;
use crate::math::mix_seed;
use crate::priors::BaselineKind;

pub use experiment::{
    dataset_splits, evaluate_dataset, loid_priors, prepare_split, run_experiment, select_splits,
    DatasetEntry, ExperimentConfig, SplitSelection,
};
pub use metrics::{auc, gap_closed};
pub use report::{
    read_results, render_table, summarize, write_results, write_summary_csv, write_sweep_csv,
    write_sweep_plot_csv, write_timings_csv, SummaryRow,
};
pub use sweep::{
    summarize_sweep, sweep, sweep_dataset, SweepBest, SweepGrid, SweepReport, SweepRow,
};

/// A prior (or no-prior) setting compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Maximum likelihood on the shifted training split.
    OodLr,
    /// Language-model-elicited priors.
    Loid,
    #[serde(rename = "normal_0_1")]
    Normal0_1,
    #[serde(rename = "normal_0_045")]
    Normal0_045,
    #[serde(rename = "uniform_m1_1")]
    UniformM1_1,
    /// Maximum likelihood on the full dataset; the upper reference.
    Cap,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::OodLr,
        Condition::Loid,
        Condition::Normal0_1,
        Condition::Normal0_045,
        Condition::UniformM1_1,
        Condition::Cap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::OodLr => "ood_lr",
            Condition::Loid => "loid",
            Condition::Normal0_1 => "normal_0_1",
            Condition::Normal0_045 => "normal_0_045",
            Condition::UniformM1_1 => "uniform_m1_1",
            Condition::Cap => "cap",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Condition::Normal0_1 => Some(BaselineKind::Normal0_1),
            Condition::Normal0_045 => Some(BaselineKind::Normal0_045),
            Condition::UniformM1_1 => Some(BaselineKind::UniformM1_1),
            _ => None,
        }
    }

    /// True for the two maximum-likelihood reference conditions.
    pub fn is_reference(self) -> bool {
        matches!(self, Condition::OodLr | Condition::Cap)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Nuts,
    Laplace,
    Mle,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Nuts => "nuts",
            Engine::Laplace => "laplace",
            Engine::Mle => "mle",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The split fields kept in result records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub strategy: ShiftStrategy,
    pub feature: String,
    pub lower_q: f64,
    pub upper_q: f64,
    pub lower_value: f64,
    pub upper_value: f64,
    pub n_train: usize,
    pub n_eval: usize,
}

impl SplitSummary {
    pub fn new(spec: &SplitSpec, n_eval: usize) -> Self {
        SplitSummary {
            strategy: spec.strategy,
            feature: spec.shift_feature.clone(),
            lower_q: spec.lower_q,
            upper_q: spec.upper_q,
            lower_value: spec.lower_value,
            upper_value: spec.upper_value,
            n_train: spec.train_size(),
            n_eval,
        }
    }
}

/// Sampler health for NUTS fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub divergences: usize,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub split: SplitSummary,
    pub condition: Condition,
    pub engine: Engine,
    pub auc: f64,
    /// Defined once both reference conditions ran and their AUCs differ.
    pub gap_closed_pct: Option<f64>,
    /// Master seed of the experiment.
    pub seed: u64,
    /// Seed derived for this cell and passed to the fit.
    pub cell_seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
    /// Wall-clock seconds for fit and prediction. Kept out of the results
    /// file so that reruns are byte-identical; see [`write_timings_csv`].
    #[serde(skip)]
    pub runtime_secs: f64,
    /// Wall-clock seconds spent probing, for the `loid` condition.
    #[serde(skip)]
    pub probe_secs: Option<f64>,
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes to JSON");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Seed for one experiment cell, derived from the master seed and the cell's
/// identity so that cells are independent of evaluation order.
pub fn cell_seed(master: u64, dataset: &str, split: &SplitSpec, condition: Condition) -> u64 {
    let mut h = Sha256::new();
    for part in [
        dataset,
        split.strategy.as_str(),
        &split.shift_feature,
        condition.as_str(),
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    let salt = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    mix_seed(master, salt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
            assert_eq!(
                serde_json::to_string(&c).unwrap(),
                format!("\"{}\"", c.as_str())
            );
        }
        assert!("nope".parse::<Condition>().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"a": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"a": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})));
        assert_eq!(a.len(), 64);
    }
}

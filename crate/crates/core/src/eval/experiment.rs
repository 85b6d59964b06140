use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::SweepGrid;
use super::{
    auc, cell_seed, config_hash, gap_closed, Condition, Engine, EvalResult, FitDiagnostics,
    SplitSummary,
};
use crate::dataset::{
    apply_split, build_split, enumerate_splits, preprocess, DatasetConfig, PreprocessOptions,
    RawDataset, ShiftStrategy, SplitConfig, SplitSpec, TabularDataset,
};
use crate::error::{Error, Result};
use crate::inference::{
    laplace_fit, mle_fit, nuts_sample, LogisticPosterior, NewtonConfig, Predictor, SamplerConfig,
};
use crate::priors::{baseline_priors, elicit_prior_set, ElicitationConfig, PriorDist, PriorSet};
use crate::probe::{ProbeConfig, ProbeMeasurement, Prober};

/// Which splits of a dataset to evaluate. With both `strategy` and
/// `feature` set, exactly that split is used; otherwise the admissible
/// splits matching the given filters are enumerated and the first one (or
/// every one, with `all`) is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSelection {
    pub strategy: Option<ShiftStrategy>,
    pub feature: Option<String>,
    pub all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// Path to a dataset config file.
    pub config: PathBuf,
    #[serde(default)]
    pub split: SplitSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetEntry>,
    pub conditions: Vec<Condition>,
    /// Engine for the Bayesian conditions.
    pub engine: Engine,
    pub sampler: SamplerConfig,
    pub newton: NewtonConfig,
    pub elicitation: ElicitationConfig,
    pub probe: ProbeConfig,
    pub standardize: bool,
    pub splits: SplitConfig,
    pub seed: u64,
    /// L2 penalty for the maximum-likelihood conditions.
    pub ridge: f64,
    /// Replaces the sigma of the normal baseline priors (intercept included).
    pub baseline_sigma: Option<f64>,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            conditions: Condition::ALL.to_vec(),
            engine: Engine::Nuts,
            sampler: SamplerConfig::default(),
            newton: NewtonConfig::default(),
            elicitation: ElicitationConfig::default(),
            probe: ProbeConfig::default(),
            standardize: true,
            splits: SplitConfig::default(),
            seed: 0,
            ridge: 1e-6,
            baseline_sigma: None,
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `value` and makes relative paths relative to `base`.
    pub fn from_value(value: serde_json::Value, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.datasets {
            if d.config.is_relative() {
                d.config = base.join(&d.config);
            }
        }
        self.probe.resolve_paths(base);
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Config("no conditions requested".into()));
        }
        if self.engine == Engine::Mle {
            return Err(Error::Config(
                "engine must be `nuts` or `laplace`; maximum likelihood is the ood_lr and cap conditions".into(),
            ));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Config(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        if let Some(s) = self.baseline_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!(
                    "baseline_sigma must be positive, got {s}"
                )));
            }
        }
        if self.conditions.iter().any(|c| !c.is_reference()) {
            self.sampler.validate()?;
        }
        self.elicitation.validate()
    }

    /// Hash of everything that affects results; the probe cache location
    /// is excluded.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.probe.cache = None;
        config_hash(&cfg)
    }
}

/// Splits chosen by `selection`, computed on `ds` (unstandardized, so the
/// reported bounds are in raw units).
pub fn select_splits(
    ds: &TabularDataset,
    selection: &SplitSelection,
    cfg: &SplitConfig,
) -> Result<Vec<SplitSpec>> {
    if let (Some(strategy), Some(feature)) = (selection.strategy, &selection.feature) {
        let spec = build_split(ds, feature, strategy, cfg.range(strategy))?;
        let candidates = enumerate_splits(
            ds,
            &SplitConfig {
                strategies: vec![strategy],
                ..cfg.clone()
            },
        );
        if !candidates.iter().any(|c| c == &spec) {
            return Err(Error::Config(format!(
                "split {strategy} on `{feature}` of `{}` is degenerate: fewer than {} training rows, \
                 a single class, or a constant feature",
                ds.name, cfg.min_samples
            )));
        }
        return Ok(vec![spec]);
    }
    let matching: Vec<SplitSpec> = enumerate_splits(ds, cfg)
        .into_iter()
        .filter(|s| selection.strategy.is_none_or(|st| st == s.strategy))
        .filter(|s| {
            selection
                .feature
                .as_ref()
                .is_none_or(|f| f == &s.shift_feature)
        })
        .collect();
    if matching.is_empty() {
        return Err(Error::Config(format!(
            "no admissible split of `{}` matches the selection",
            ds.name
        )));
    }
    Ok(if selection.all {
        matching
    } else {
        matching.into_iter().take(1).collect()
    })
}

/// Splits of `raw` chosen by `selection`, with bounds in raw feature units.
pub fn dataset_splits(
    raw: &RawDataset,
    selection: &SplitSelection,
    cfg: &SplitConfig,
) -> Result<Vec<SplitSpec>> {
    select_splits(&unscaled(raw)?, selection, cfg)
}

/// Dataset preprocessed with statistics from the training rows of `spec`.
pub fn prepare_split(
    raw: &RawDataset,
    spec: &SplitSpec,
    standardize: bool,
) -> Result<TabularDataset> {
    let (ds, _) = preprocess(
        raw,
        &PreprocessOptions {
            standardize,
            fit_mask: Some(spec.train_mask.clone()),
        },
    )?;
    Ok(ds)
}

pub(crate) fn unscaled(raw: &RawDataset) -> Result<TabularDataset> {
    Ok(preprocess(
        raw,
        &PreprocessOptions {
            standardize: false,
            fit_mask: None,
        },
    )?
    .0)
}

fn has_uniform(priors: &PriorSet) -> bool {
    priors
        .priors
        .iter()
        .map(|p| &p.dist)
        .chain([&priors.intercept])
        .any(|d| matches!(d, PriorDist::Uniform { .. }))
}

/// Fits a Bayesian logistic regression and returns predictive probabilities
/// on `eval`. Laplace cannot represent uniform priors, so those fits use NUTS.
pub(crate) fn fit_bayes(
    train: &TabularDataset,
    eval: &TabularDataset,
    priors: &PriorSet,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<f64>, Engine, Option<FitDiagnostics>)> {
    let engine = if cfg.engine == Engine::Laplace && has_uniform(priors) {
        warn!(target: "eval", "uniform priors are not supported by laplace; using nuts");
        Engine::Nuts
    } else {
        cfg.engine
    };
    match engine {
        Engine::Laplace => {
            let fit = laplace_fit(train, priors, &cfg.newton, seed)?;
            Ok((fit.predict_proba(&eval.x)?, engine, None))
        }
        _ => {
            let post = LogisticPosterior::from_dataset(train, priors)?;
            let draws = nuts_sample(
                &post,
                &SamplerConfig {
                    seed,
                    ..cfg.sampler.clone()
                },
            )?;
            let finite = |v: f64| v.is_finite().then_some(v);
            let diag = FitDiagnostics {
                divergences: draws.divergences(),
                max_rhat: finite(draws.max_rhat()),
                min_ess: finite(draws.min_ess()),
            };
            if diag.divergences > 0 {
                warn!(target: "eval", "{} divergent transitions", diag.divergences);
            }
            Ok((draws.predict_proba(&eval.x)?, Engine::Nuts, Some(diag)))
        }
    }
}

/// Elicited priors for the features of `ds`, the measurements behind them
/// and the probing time in seconds.
pub fn loid_priors(
    ds: &TabularDataset,
    cfg: &ExperimentConfig,
    elicitation: &ElicitationConfig,
    prober: Option<&Prober>,
) -> Result<(PriorSet, Vec<Vec<ProbeMeasurement>>, f64)> {
    let prober = prober.ok_or_else(|| {
        Error::Config("the loid condition needs a probe backend or a populated cache".into())
    })?;
    let ts = cfg.probe.template_set()?.with_n_sent(elicitation.n_sent)?;
    let t0 = Instant::now();
    let ms = prober.probe_dataset(ds, &ts, cfg.probe.use_descriptions)?;
    let secs = t0.elapsed().as_secs_f64();
    let priors = elicit_prior_set(&ds.features, &ms, elicitation, prober.model_id())?;
    Ok((priors, ms, secs))
}

/// Runs every configured condition on every selected split of `raw`.
pub fn evaluate_dataset(
    raw: &RawDataset,
    selection: &SplitSelection,
    cfg: &ExperimentConfig,
    prober: Option<&Prober>,
    config_hash: &str,
) -> Result<Vec<EvalResult>> {
    let splits = select_splits(&unscaled(raw)?, selection, &cfg.splits)?;
    let mut out = Vec::new();
    for spec in &splits {
        info!(
            target: "eval",
            "dataset={} split={}:{} n_train={}",
            raw.name,
            spec.strategy,
            spec.shift_feature,
            spec.train_size()
        );
        out.extend(evaluate_split(raw, spec, cfg, prober, config_hash)?);
    }
    Ok(out)
}

fn evaluate_split(
    raw: &RawDataset,
    spec: &SplitSpec,
    cfg: &ExperimentConfig,
    prober: Option<&Prober>,
    config_hash: &str,
) -> Result<Vec<EvalResult>> {
    let ds = prepare_split(raw, spec, cfg.standardize)?;
    let (train, eval) = apply_split(&ds, spec, cfg.splits.eval)?;
    let loid = if cfg.conditions.contains(&Condition::Loid) {
        let (priors, _, secs) = loid_priors(&ds, cfg, &cfg.elicitation, prober)?;
        Some((priors, secs))
    } else {
        None
    };

    let summary = SplitSummary::new(spec, eval.n_rows());
    let mut results = cfg
        .conditions
        .par_iter()
        .map(|&condition| {
            let seed = cell_seed(cfg.seed, &raw.name, spec, condition);
            let t0 = Instant::now();
            let (probs, engine, diagnostics) = match condition {
                Condition::OodLr => {
                    let c = mle_fit(&train, cfg.ridge, &cfg.newton)?;
                    (c.predict_proba(&eval.x)?, Engine::Mle, None)
                }
                Condition::Cap => {
                    let c = mle_fit(&ds, cfg.ridge, &cfg.newton)?;
                    (c.predict_proba(&eval.x)?, Engine::Mle, None)
                }
                Condition::Loid => {
                    let (priors, _) = loid.as_ref().expect("priors elicited above");
                    fit_bayes(&train, &eval, priors, cfg, seed)?
                }
                baseline => {
                    let kind = baseline.baseline().expect("remaining conditions are baselines");
                    let mut priors = baseline_priors(kind, &train.features, cfg.elicitation.intercept)?;
                    if let Some(s) = cfg.baseline_sigma {
                        priors = priors.with_sigma(s);
                    }
                    fit_bayes(&train, &eval, &priors, cfg, seed)?
                }
            };
            let runtime_secs = t0.elapsed().as_secs_f64();
            let auc = auc(&probs, &eval.labels)?;
            info!(target: "eval", "dataset={} condition={condition} engine={engine} auc={auc:.4}", raw.name);
            Ok(EvalResult {
                dataset: raw.name.clone(),
                split: summary.clone(),
                condition,
                engine,
                auc,
                gap_closed_pct: None,
                seed: cfg.seed,
                cell_seed: seed,
                config_hash: config_hash.to_string(),
                diagnostics,
                runtime_secs,
                probe_secs: (condition == Condition::Loid)
                    .then(|| loid.as_ref().map(|l| l.1))
                    .flatten(),
            })
        })
        .collect::<Result<Vec<EvalResult>>>()?;

    let reference = |c: Condition| results.iter().find(|r| r.condition == c).map(|r| r.auc);
    if let (Some(ood), Some(cap)) = (reference(Condition::OodLr), reference(Condition::Cap)) {
        for r in &mut results {
            r.gap_closed_pct = gap_closed(r.auc, ood, cap);
        }
    }
    Ok(results)
}

/// Loads every configured dataset and evaluates it; results are ordered by
/// dataset, split and then condition as configured.
pub fn run_experiment(cfg: &ExperimentConfig, prober: Option<&Prober>) -> Result<Vec<EvalResult>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut out = Vec::new();
    for entry in &cfg.datasets {
        let raw = DatasetConfig::from_file(&entry.config)?.load()?;
        out.extend(evaluate_dataset(&raw, &entry.split, cfg, prober, &hash)?);
    }
    Ok(out)
}

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{
    fit_bayes, loid_priors, prepare_split, select_splits, unscaled, ExperimentConfig,
    SplitSelection,
};
use super::{auc, cell_seed, Condition};
use crate::dataset::{apply_split, DatasetConfig, RawDataset};
use crate::error::{Error, Result};
use crate::priors::{elicit_prior_set, ElicitationConfig};
use crate::probe::Prober;

/// Hyperparameter grid for elicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub n_sents: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            alphas: vec![0.1, 0.2, 0.3, 0.5],
            gammas: vec![1.0, 2.0, 3.0, 4.0],
            n_sents: vec![5, 10, 15, 20],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self, available_templates: usize) -> Result<()> {
        if self.alphas.is_empty() || self.gammas.is_empty() || self.n_sents.is_empty() {
            return Err(Error::Config("sweep grid sets must be non-empty".into()));
        }
        let needed = self.max_n_sent();
        if needed > available_templates {
            return Err(Error::Config(format!(
                "sweep grid needs {needed} templates but only {available_templates} are available"
            )));
        }
        Ok(())
    }

    pub fn max_n_sent(&self) -> usize {
        self.n_sents.iter().copied().max().unwrap_or(0)
    }

    /// Grid points in alpha-major order.
    pub fn points(&self) -> Vec<(f64, f64, usize)> {
        let mut out =
            Vec::with_capacity(self.alphas.len() * self.gammas.len() * self.n_sents.len());
        for &a in &self.alphas {
            for &g in &self.gammas {
                for &n in &self.n_sents {
                    out.push((a, g, n));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub strategy: String,
    pub feature: String,
    pub alpha: f64,
    pub gamma: f64,
    pub n_sent: usize,
    pub auc: f64,
    /// True at the configured elicitation defaults.
    pub is_default: bool,
    pub seed: u64,
    pub cell_seed: u64,
    pub config_hash: String,
}

/// The best grid point for one dataset, or across datasets (`dataset` = None)
/// by mean AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBest {
    pub dataset: Option<String>,
    pub alpha: f64,
    pub gamma: f64,
    pub n_sent: usize,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_per_dataset: Vec<SweepBest>,
    pub average_best: SweepBest,
    /// Mean AUC across datasets at the configured defaults, if on the grid.
    pub default_mean_auc: Option<f64>,
}

/// Every grid point on every selected split of `raw`. Probing happens once
/// with the largest template count; smaller counts use a prefix of it.
pub fn sweep_dataset(
    raw: &RawDataset,
    selection: &SplitSelection,
    cfg: &ExperimentConfig,
    prober: &Prober,
    config_hash: &str,
) -> Result<Vec<SweepRow>> {
    let grid = &cfg.sweep;
    grid.validate(cfg.probe.template_set()?.available())?;
    let widest = ElicitationConfig {
        n_sent: grid.max_n_sent(),
        ..cfg.elicitation.clone()
    };
    let defaults = &cfg.elicitation;
    let mut rows = Vec::new();
    for spec in select_splits(&unscaled(raw)?, selection, &cfg.splits)? {
        let ds = prepare_split(raw, &spec, cfg.standardize)?;
        let (train, eval) = apply_split(&ds, &spec, cfg.splits.eval)?;
        let (_, measurements, _) = loid_priors(&ds, cfg, &widest, Some(prober))?;
        let seed = cell_seed(cfg.seed, &raw.name, &spec, Condition::Loid);
        let cells = grid
            .points()
            .into_par_iter()
            .map(|(alpha, gamma, n_sent)| {
                let ec = ElicitationConfig {
                    alpha,
                    gamma,
                    n_sent,
                    ..cfg.elicitation.clone()
                };
                let priors = elicit_prior_set(&ds.features, &measurements, &ec, prober.model_id())?;
                let (probs, _, _) = fit_bayes(&train, &eval, &priors, cfg, seed)?;
                let a = auc(&probs, &eval.labels)?;
                info!(
                    target: "sweep",
                    "dataset={} alpha={alpha} gamma={gamma} n_sent={n_sent} auc={a:.4}",
                    raw.name
                );
                Ok(SweepRow {
                    dataset: raw.name.clone(),
                    strategy: spec.strategy.to_string(),
                    feature: spec.shift_feature.clone(),
                    alpha,
                    gamma,
                    n_sent,
                    auc: a,
                    is_default: alpha == defaults.alpha
                        && gamma == defaults.gamma
                        && n_sent == defaults.n_sent,
                    seed: cfg.seed,
                    cell_seed: seed,
                    config_hash: config_hash.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(cells);
    }
    Ok(rows)
}

fn same_point(r: &SweepRow, p: (f64, f64, usize)) -> bool {
    r.alpha == p.0 && r.gamma == p.1 && r.n_sent == p.2
}

fn mean_at<'a>(rows: impl Iterator<Item = &'a SweepRow>, p: (f64, f64, usize)) -> Option<f64> {
    let v: Vec<f64> = rows.filter(|r| same_point(r, p)).map(|r| r.auc).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Argmax over grid points of the mean AUC of `rows`; the first point wins ties.
fn best(rows: &[&SweepRow], grid: &SweepGrid, dataset: Option<String>) -> Option<SweepBest> {
    let mut out: Option<SweepBest> = None;
    for p in grid.points() {
        let Some(m) = mean_at(rows.iter().copied(), p) else {
            continue;
        };
        if out.as_ref().is_none_or(|b| m > b.mean_auc) {
            out = Some(SweepBest {
                dataset: dataset.clone(),
                alpha: p.0,
                gamma: p.1,
                n_sent: p.2,
                mean_auc: m,
            });
        }
    }
    out
}

/// Per-dataset and overall best points for a set of sweep rows.
pub fn summarize_sweep(
    rows: Vec<SweepRow>,
    grid: &SweepGrid,
    defaults: &ElicitationConfig,
) -> Result<SweepReport> {
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.dataset) {
            names.push(r.dataset.clone());
        }
    }
    let best_per_dataset = names
        .iter()
        .filter_map(|n| {
            let sub: Vec<&SweepRow> = rows.iter().filter(|r| &r.dataset == n).collect();
            best(&sub, grid, Some(n.clone()))
        })
        .collect();
    // Average over datasets of each dataset's mean, so datasets with more
    // splits do not dominate.
    let mut average_best: Option<SweepBest> = None;
    let mut default_mean_auc = None;
    let default_point = (defaults.alpha, defaults.gamma, defaults.n_sent);
    for p in grid.points() {
        let per: Vec<f64> = names
            .iter()
            .filter_map(|n| mean_at(rows.iter().filter(|r| &r.dataset == n), p))
            .collect();
        if per.is_empty() {
            continue;
        }
        let m = per.iter().sum::<f64>() / per.len() as f64;
        if p == default_point {
            default_mean_auc = Some(m);
        }
        if average_best.as_ref().is_none_or(|b| m > b.mean_auc) {
            average_best = Some(SweepBest {
                dataset: None,
                alpha: p.0,
                gamma: p.1,
                n_sent: p.2,
                mean_auc: m,
            });
        }
    }
    Ok(SweepReport {
        rows,
        best_per_dataset,
        average_best: average_best.ok_or_else(|| Error::Config("sweep produced no rows".into()))?,
        default_mean_auc,
    })
}

/// Sweeps the configured grid over every configured dataset.
pub fn sweep(cfg: &ExperimentConfig, prober: &Prober) -> Result<SweepReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for entry in &cfg.datasets {
        let raw = DatasetConfig::from_file(&entry.config)?.load()?;
        rows.extend(sweep_dataset(&raw, &entry.split, cfg, prober, &hash)?);
    }
    summarize_sweep(rows, &cfg.sweep, &cfg.elicitation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, a: f64, g: f64, n: usize, auc: f64) -> SweepRow {
        SweepRow {
            dataset: dataset.into(),
            strategy: "tail_0_50".into(),
            feature: "x".into(),
            alpha: a,
            gamma: g,
            n_sent: n,
            auc,
            is_default: false,
            seed: 0,
            cell_seed: 0,
            config_hash: String::new(),
        }
    }

    #[test]
    fn default_grid_has_64_points() {
        let g = SweepGrid::default();
        assert_eq!(g.points().len(), 64);
        assert_eq!(g.max_n_sent(), 20);
        assert!(g.validate(20).is_ok());
        assert!(matches!(g.validate(10), Err(Error::Config(_))));
    }

    #[test]
    fn argmax_per_dataset_and_overall() {
        let grid = SweepGrid {
            alphas: vec![0.1, 0.2],
            gammas: vec![2.0],
            n_sents: vec![10],
        };
        let rows = vec![
            row("a", 0.1, 2.0, 10, 0.80),
            row("a", 0.2, 2.0, 10, 0.70),
            row("b", 0.1, 2.0, 10, 0.60),
            row("b", 0.2, 2.0, 10, 0.75),
        ];
        let rep = summarize_sweep(rows, &grid, &ElicitationConfig::default()).unwrap();
        assert_eq!(rep.best_per_dataset[0].alpha, 0.1);
        assert_eq!(rep.best_per_dataset[1].alpha, 0.2);
        // Means: 0.70 at alpha 0.1, 0.725 at alpha 0.2.
        assert_eq!(rep.average_best.alpha, 0.2);
        assert!((rep.default_mean_auc.unwrap() - 0.725).abs() < 1e-12);
    }
}

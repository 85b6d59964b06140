use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{gap_closed, Condition, EvalResult, SweepReport};
use crate::error::{Error, Result};

/// One line per result, in order.
pub fn write_results(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut buf = Vec::new();
    for r in results {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<EvalResult>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// AUCs of every condition on one (dataset, split), with gap closed for the
/// prior-based conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: String,
    pub feature: String,
    pub auc: BTreeMap<Condition, f64>,
    pub gap: BTreeMap<Condition, f64>,
    pub config_hash: String,
    pub seed: u64,
}

/// Groups results by (dataset, split) in first-seen order. Gap closed is
/// recomputed from the AUCs so that hand-written result files render too.
pub fn summarize(results: &[EvalResult]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for r in results {
        let strategy = r.split.strategy.to_string();
        let pos = rows.iter().position(|s| {
            s.dataset == r.dataset && s.strategy == strategy && s.feature == r.split.feature
        });
        let row = match pos {
            Some(i) => &mut rows[i],
            None => {
                rows.push(SummaryRow {
                    dataset: r.dataset.clone(),
                    strategy,
                    feature: r.split.feature.clone(),
                    auc: BTreeMap::new(),
                    gap: BTreeMap::new(),
                    config_hash: r.config_hash.clone(),
                    seed: r.seed,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.auc.insert(r.condition, r.auc);
    }
    for row in &mut rows {
        if let (Some(&ood), Some(&cap)) =
            (row.auc.get(&Condition::OodLr), row.auc.get(&Condition::Cap))
        {
            for (&c, &a) in &row.auc {
                if c.is_reference() {
                    continue;
                }
                if let Some(g) = gap_closed(a, ood, cap) {
                    row.gap.insert(c, g);
                }
            }
        }
    }
    rows
}

fn prior_conditions() -> impl Iterator<Item = Condition> {
    Condition::ALL.into_iter().filter(|c| !c.is_reference())
}

/// `summary.csv`: AUC per condition, then gap closed per prior condition.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["dataset".into(), "strategy".into(), "feature".into()];
    header.extend(Condition::ALL.iter().map(|c| c.as_str().to_string()));
    header.extend(prior_conditions().map(|c| format!("gap_closed_{c}")));
    header.extend(["config_hash".to_string(), "seed".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.dataset.clone(), r.strategy.clone(), r.feature.clone()];
        rec.extend(
            Condition::ALL
                .iter()
                .map(|c| r.auc.get(c).map(|a| format!("{a:.4}")).unwrap_or_default()),
        );
        rec.extend(prior_conditions().map(|c| {
            r.gap
                .get(&c)
                .map(|g| format!("{g:+.1}"))
                .unwrap_or_default()
        }));
        rec.push(r.config_hash.clone());
        rec.push(r.seed.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width table with two-decimal AUCs and whole-percent gap closed for
/// the elicited priors.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:<24} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}",
        "dataset", "split", "ood_lr", "loid", "n(0,1)", "n(0,.45)", "u(-1,1)", "cap", "gap%"
    );
    for r in rows {
        let a = |c: Condition| {
            r.auc
                .get(&c)
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into())
        };
        let gap = r
            .gap
            .get(&Condition::Loid)
            .map(|g| format!("{g:+.0}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<20} {:<24} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}",
            r.dataset,
            format!("{}:{}", r.strategy, r.feature),
            a(Condition::OodLr),
            a(Condition::Loid),
            a(Condition::Normal0_1),
            a(Condition::Normal0_045),
            a(Condition::UniformM1_1),
            a(Condition::Cap),
            gap
        );
    }
    s
}

/// Wall-clock timings, kept apart from the results so reruns can be diffed.
pub fn write_timings_csv(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset",
        "strategy",
        "feature",
        "condition",
        "engine",
        "fit_secs",
        "probe_secs",
        "config_hash",
        "seed",
    ])?;
    for r in results {
        w.write_record([
            r.dataset.clone(),
            r.split.strategy.to_string(),
            r.split.feature.clone(),
            r.condition.to_string(),
            r.engine.to_string(),
            format!("{:.6}", r.runtime_secs),
            r.probe_secs.map(|p| format!("{p:.6}")).unwrap_or_default(),
            r.config_hash.clone(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `sweep.csv` with one row per (dataset, split, grid point).
pub fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format plot data: mean and best AUC per value of each hyperparameter,
/// per dataset and over all datasets (`dataset = all`).
type Getter = fn(&super::SweepRow) -> f64;

pub fn write_sweep_plot_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut datasets: Vec<String> = Vec::new();
    for r in &report.rows {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    datasets.push("all".into());
    let (hash, seed) = report
        .rows
        .first()
        .map(|r| (r.config_hash.as_str(), r.seed))
        .unwrap_or(("", 0));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("dataset,parameter,value,mean_auc,max_auc,config_hash,seed\n");
    for d in &datasets {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| d == "all" || &r.dataset == d)
            .collect();
        let params: [(&str, Getter); 3] = [
            ("alpha", |r| r.alpha),
            ("gamma", |r| r.gamma),
            ("n_sent", |r| r.n_sent as f64),
        ];
        for (name, get) in params {
            let mut values: Vec<f64> = rows.iter().map(|r| get(r)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for v in values {
                let aucs: Vec<f64> = rows.iter().filter(|r| get(r) == v).map(|r| r.auc).collect();
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                let max = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(out, "{d},{name},{v},{mean:.6},{max:.6},{hash},{seed}");
            }
        }
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ShiftStrategy;
    use crate::eval::{Engine, SplitSummary};

    fn result(condition: Condition, auc: f64) -> EvalResult {
        EvalResult {
            dataset: "heart".into(),
            split: SplitSummary {
                strategy: ShiftStrategy::Moderate20_80,
                feature: "chol".into(),
                lower_q: 0.2,
                upper_q: 0.8,
                lower_value: 200.0,
                upper_value: 280.0,
                n_train: 180,
                n_eval: 303,
            },
            condition,
            engine: Engine::Nuts,
            auc,
            gap_closed_pct: None,
            seed: 7,
            cell_seed: 11,
            config_hash: "abc".into(),
            diagnostics: None,
            runtime_secs: 1.5,
            probe_secs: None,
        }
    }

    #[test]
    fn table_shows_plus_fifty() {
        let rs = vec![
            result(Condition::OodLr, 0.87),
            result(Condition::Loid, 0.90),
            result(Condition::Cap, 0.93),
        ];
        let rows = summarize(&rs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].gap[&Condition::Loid], 50.0);
        let t = render_table(&rows);
        assert!(t.lines().nth(1).unwrap().trim_end().ends_with("+50"), "{t}");
    }

    #[test]
    fn jsonl_round_trip_drops_runtime() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.jsonl");
        let rs = vec![result(Condition::OodLr, 0.87), result(Condition::Cap, 0.93)];
        write_results(&p, &rs).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].auc, 0.87);
        assert_eq!(back[0].runtime_secs, 0.0);
        assert!(!std::fs::read_to_string(&p).unwrap().contains("runtime"));
    }

    #[test]
    fn summary_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        let rs = vec![
            result(Condition::OodLr, 0.87),
            result(Condition::Loid, 0.90),
            result(Condition::Cap, 0.93),
        ];
        write_summary_csv(&p, &summarize(&rs)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("dataset,strategy,feature,ood_lr,loid,"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("heart,moderate_20_80,chol,0.8700,0.9000,,,,0.9300,+50.0,"));
    }
}

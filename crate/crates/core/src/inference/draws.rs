use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::diagnostics::{effective_sample_size, split_rhat};
use super::{Coefficients, Predictor};
use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Per-chain sampler statistics for the kept draws.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub accept_stat: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub energy: Vec<f64>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

impl ChainStats {
    pub fn mean_accept(&self) -> f64 {
        if self.accept_stat.is_empty() {
            return f64::NAN;
        }
        self.accept_stat.iter().sum::<f64>() / self.accept_stat.len() as f64
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }
}

/// Summary written next to a draws CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsSummary {
    pub names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub mean: Vec<f64>,
    /// `None` where the diagnostic is undefined (e.g. a constant chain).
    pub ess: Vec<Option<f64>>,
    pub rhat: Vec<Option<f64>>,
    pub divergences: usize,
    pub accept_rate: Vec<Option<f64>>,
    pub step_size: Vec<f64>,
    /// Caller-supplied provenance such as the config hash and seed.
    #[serde(flatten)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// Posterior draws stored chain-major: draw `i` of chain `c` occupies
/// `samples[(c * draws + i) * dim..][..dim]`. Parameters are the slopes
/// followed by the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    chains: usize,
    draws: usize,
    samples: Vec<f64>,
    stats: Vec<ChainStats>,
    ess: Vec<f64>,
    rhat: Vec<f64>,
}

impl PosteriorDraws {
    pub fn new(
        names: Vec<String>,
        chains: usize,
        draws: usize,
        samples: Vec<f64>,
        stats: Vec<ChainStats>,
    ) -> Result<Self> {
        let dim = names.len();
        if samples.len() != chains * draws * dim {
            return Err(Error::DimensionMismatch {
                expected: chains * draws * dim,
                got: samples.len(),
            });
        }
        let mut out = PosteriorDraws {
            names,
            chains,
            draws,
            samples,
            stats,
            ess: Vec::new(),
            rhat: Vec::new(),
        };
        let per_param: Vec<Vec<Vec<f64>>> = (0..dim).map(|k| out.chain_values(k)).collect();
        out.ess = per_param.iter().map(|c| effective_sample_size(c)).collect();
        out.rhat = per_param.iter().map(|c| split_rhat(c)).collect();
        Ok(out)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws
    }

    pub fn n_draws(&self) -> usize {
        self.chains * self.draws
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.draws + i) * d;
        &self.samples[start..start + d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim().max(1))
    }

    /// Values of parameter `k`, one vector per chain.
    pub fn chain_values(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.draws).map(|i| self.draw(c, i)[k]).collect())
            .collect()
    }

    /// All values of parameter `k`, chain-major.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        self.iter().map(|d| d[k]).collect()
    }

    pub fn mean(&self) -> Coefficients {
        let d = self.dim();
        let mut acc = vec![0.0; d];
        for draw in self.iter() {
            for (a, v) in acc.iter_mut().zip(draw) {
                *a += v;
            }
        }
        let n = self.n_draws() as f64;
        Coefficients::from_slice(&acc.iter().map(|a| a / n).collect::<Vec<_>>())
    }

    pub fn stats(&self) -> &[ChainStats] {
        &self.stats
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().map(ChainStats::divergences).sum()
    }

    pub fn ess(&self) -> &[f64] {
        &self.ess
    }

    pub fn rhat(&self) -> &[f64] {
        &self.rhat
    }

    /// Smallest ESS over parameters (NaN entries propagate).
    pub fn min_ess(&self) -> f64 {
        self.ess
            .iter()
            .copied()
            .fold(f64::INFINITY, |a, b| if b.is_nan() { b } else { a.min(b) })
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(
            f64::NEG_INFINITY,
            |a, b| if b.is_nan() { b } else { a.max(b) },
        )
    }

    pub fn summary(&self) -> DrawsSummary {
        DrawsSummary {
            names: self.names.clone(),
            chains: self.chains,
            draws_per_chain: self.draws,
            mean: self.mean().to_vec(),
            ess: self.ess.iter().map(|v| finite(*v)).collect(),
            rhat: self.rhat.iter().map(|v| finite(*v)).collect(),
            divergences: self.divergences(),
            accept_rate: self.stats.iter().map(|s| finite(s.mean_accept())).collect(),
            step_size: self.stats.iter().map(|s| s.step_size).collect(),
            meta: serde_json::Map::new(),
        }
    }

    /// Writes `chain,draw,<names...>` rows to `path` and the summary as JSON
    /// to `path` with a `.diagnostics.json` suffix.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_with_meta(path, serde_json::Map::new())
    }

    /// As [`write_csv`](Self::write_csv), adding `meta` to the summary.
    pub fn write_csv_with_meta(
        &self,
        path: &Path,
        meta: serde_json::Map<String, serde_json::Value>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.chains {
            for i in 0..self.draws {
                let mut row = vec![c.to_string(), i.to_string()];
                row.extend(self.draw(c, i).iter().map(|v| format!("{v:?}")));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = diagnostics_path(path);
        let mut f = std::fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
        let mut summary = self.summary();
        summary.meta = meta;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        f.write_all(b"\n").map_err(|e| Error::io(&side, e))?;
        Ok(())
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn diagnostics_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".diagnostics.json");
    path.with_file_name(name)
}

impl Predictor for PosteriorDraws {
    /// Posterior predictive mean of `P(y = 1 | x)`.
    fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.ncols() + 1 != d {
            return Err(Error::DimensionMismatch {
                expected: d.saturating_sub(1),
                got: x.ncols(),
            });
        }
        let p = x.ncols();
        let n = x.nrows();
        let mut acc = vec![0.0; n];
        const BLOCK: usize = 512;
        let total = self.n_draws();
        let mut start = 0;
        while start < total {
            let len = BLOCK.min(total - start);
            let block = &self.samples[start * d..(start + len) * d];
            let beta = DMatrix::from_fn(p, len, |j, s| block[s * d + j]);
            let eta = x * beta;
            for s in 0..len {
                let b0 = block[s * d + p];
                for (r, a) in acc.iter_mut().enumerate() {
                    *a += sigmoid(eta[(r, s)] + b0);
                }
            }
            start += len;
        }
        Ok(acc.into_iter().map(|a| a / total as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PosteriorDraws {
        // 2 chains x 3 draws of (beta, intercept).
        let samples = vec![
            1.0, 0.0, 2.0, 0.5, 3.0, 1.0, //
            -1.0, 0.0, 0.0, -0.5, 1.0, 0.0,
        ];
        let names = vec!["x".to_string(), "_intercept".to_string()];
        PosteriorDraws::new(names, 2, 3, samples, vec![ChainStats::default(); 2]).unwrap()
    }

    #[test]
    fn layout_and_mean() {
        let d = toy();
        assert_eq!(d.draw(1, 2), &[1.0, 0.0]);
        assert_eq!(d.marginal(0), vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        assert_eq!(d.mean().beta, vec![1.0]);
        assert_eq!(d.chain_values(1)[0], vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn predictive_mean_matches_direct_average() {
        let d = toy();
        let x = DMatrix::from_row_slice(2, 1, &[0.3, -2.0]);
        let p = d.predict_proba(&x).unwrap();
        for (r, pr) in p.iter().enumerate() {
            let direct: f64 = d
                .iter()
                .map(|t| sigmoid(t[0] * x[(r, 0)] + t[1]))
                .sum::<f64>()
                / 6.0;
            assert!((pr - direct).abs() < 1e-15);
        }
        assert!(d.predict_proba(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(PosteriorDraws::new(vec!["a".into()], 2, 2, vec![0.0; 3], vec![]).is_err());
    }

    #[test]
    fn csv_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        toy().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("chain,draw,x,_intercept\n0,0,1.0,0.0\n"));
        assert_eq!(text.lines().count(), 7);
        let side = dir.path().join("draws.diagnostics.json");
        let s: DrawsSummary =
            serde_json::from_str(&std::fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(s.chains, 2);
    }
}

//! Language-model probing: paired prompts, token probabilities and logit
//! preference scores.

mod backend;
mod cache;
mod templates;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backend::{
    BackendConfig, HttpBackend, MockBackend, MockFixture, MockRule, OfflineBackend, ScoreBackend,
};
pub use cache::{prompt_hash, CacheRecord, ProbeCache};
pub use templates::{render_prompts, TemplateSet, DEFAULT_TEMPLATES};

use crate::dataset::{FeatureMeta, TabularDataset};
use crate::error::{Error, Result};
use crate::math::logit;

/// Probabilities below this are raised to it before taking ratios.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

fn floored(p: f64) -> Result<f64> {
    if p.is_nan() || p.is_infinite() || p < 0.0 {
        return Err(Error::InvalidProbability(p));
    }
    Ok(p.max(PROBABILITY_FLOOR))
}

/// `ln(P+ / P-)`, the log-odds preference for the positive token.
pub fn preference_score(p_positive: f64, p_negative: f64) -> Result<f64> {
    let (p, n) = (floored(p_positive)?, floored(p_negative)?);
    Ok(p.ln() - n.ln())
}

/// The same score written as `logit(P+ / (P+ + P-))`.
pub fn preference_score_logit(p_positive: f64, p_negative: f64) -> Result<f64> {
    let (p, n) = (floored(p_positive)?, floored(p_negative)?);
    Ok(logit(p / (p + n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMeasurement {
    pub feature: String,
    pub template_index: usize,
    pub p_positive: f64,
    pub p_negative: f64,
    pub score: f64,
}

impl ProbeMeasurement {
    pub fn new(
        feature: &str,
        template_index: usize,
        p_positive: f64,
        p_negative: f64,
    ) -> Result<Self> {
        Ok(ProbeMeasurement {
            feature: feature.to_string(),
            template_index,
            p_positive,
            p_negative,
            score: preference_score(p_positive, p_negative)?,
        })
    }
}

/// Surface forms queried for each polarity; their probabilities are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVariants {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for TokenVariants {
    fn default() -> Self {
        let v = |w: &str, cap: &str| vec![format!(" {w}"), w.to_string(), format!(" {cap}")];
        TokenVariants {
            positive: v("positive", "Positive"),
            negative: v("negative", "Negative"),
        }
    }
}

impl TokenVariants {
    fn all(&self) -> Vec<String> {
        self.positive
            .iter()
            .chain(&self.negative)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub backend: BackendConfig,
    pub variants: TokenVariants,
    pub max_in_flight: usize,
    /// Use feature descriptions in prompts; names otherwise.
    pub use_descriptions: bool,
    /// Template file; the built-in set when absent.
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            backend: BackendConfig::Offline {
                model_id: "unset".into(),
            },
            variants: TokenVariants::default(),
            max_in_flight: 4,
            use_descriptions: true,
            templates: None,
            cache: None,
        }
    }
}

impl ProbeConfig {
    /// Makes relative fixture, template and cache paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let BackendConfig::Mock { fixture } = &mut self.backend {
            fix(fixture);
        }
        if let Some(p) = &mut self.templates {
            fix(p);
        }
        if let Some(p) = &mut self.cache {
            fix(p);
        }
    }

    /// The configured templates (the built-in set by default), all active.
    pub fn template_set(&self) -> Result<TemplateSet> {
        match &self.templates {
            Some(p) => TemplateSet::from_file(p),
            None => Ok(TemplateSet::default()),
        }
    }

    pub fn build_prober(&self) -> Result<Prober> {
        let cache = match &self.cache {
            Some(p) => ProbeCache::open(p)?,
            None => ProbeCache::in_memory(),
        };
        Prober::new(
            self.backend.build()?,
            Arc::new(cache),
            self.variants.clone(),
            self.max_in_flight,
        )
    }
}

/// Scores prompts through a backend, consulting and filling a [`ProbeCache`].
pub struct Prober {
    backend: Arc<dyn ScoreBackend>,
    cache: Arc<ProbeCache>,
    variants: TokenVariants,
    pool: rayon::ThreadPool,
}

impl Prober {
    pub fn new(
        backend: Arc<dyn ScoreBackend>,
        cache: Arc<ProbeCache>,
        variants: TokenVariants,
        max_in_flight: usize,
    ) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Prober {
            backend,
            cache,
            variants,
            pool,
        })
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn cache(&self) -> &ProbeCache {
        &self.cache
    }

    /// Probabilities for every variant token, plus records not yet cached.
    fn fetch(&self, prompt: &str) -> Result<(f64, f64, Vec<CacheRecord>)> {
        let model = self.backend.model_id();
        let tokens = self.variants.all();
        let cached: Vec<Option<f64>> = tokens
            .iter()
            .map(|t| self.cache.get(model, prompt, t))
            .collect();
        let mut probs = vec![0.0; tokens.len()];
        let mut fresh = Vec::new();
        if cached.iter().all(Option::is_some) {
            for (p, c) in probs.iter_mut().zip(&cached) {
                *p = c.unwrap_or_default();
            }
        } else {
            let missing: Vec<String> = tokens
                .iter()
                .zip(&cached)
                .filter(|(_, c)| c.is_none())
                .map(|(t, _)| t.clone())
                .collect();
            let answered = self.backend.score(prompt, &missing)?;
            for (i, t) in tokens.iter().enumerate() {
                probs[i] = match cached[i] {
                    Some(p) => p,
                    None => {
                        let p = answered.get(t).copied().unwrap_or(0.0);
                        if !p.is_finite() || p < 0.0 {
                            return Err(Error::Backend(format!(
                                "backend returned probability {p} for token `{t}`"
                            )));
                        }
                        fresh.push(CacheRecord::new(model, prompt, t, p));
                        p
                    }
                };
            }
        }
        let n_pos = self.variants.positive.len();
        let p_pos: f64 = probs[..n_pos].iter().sum();
        let p_neg: f64 = probs[n_pos..].iter().sum();
        if p_pos < PROBABILITY_FLOOR && p_neg < PROBABILITY_FLOOR {
            return Err(Error::Unscorable {
                prompt: prompt.to_string(),
            });
        }
        Ok((p_pos, p_neg, fresh))
    }

    /// `(P+, P-)` for one prompt, summed over token variants.
    pub fn score_tokens(&self, prompt: &str) -> Result<(f64, f64)> {
        let (p, n, fresh) = self.fetch(prompt)?;
        self.cache.insert(&fresh)?;
        Ok((p, n))
    }

    /// One measurement per active template, in template order. Any failing
    /// template fails the whole feature.
    pub fn probe_feature(
        &self,
        feature: &FeatureMeta,
        target_desc: &str,
        ts: &TemplateSet,
        use_descriptions: bool,
    ) -> Result<Vec<ProbeMeasurement>> {
        let prompts = render_prompts(feature.prompt_text(use_descriptions), target_desc, ts);
        let fetched: Vec<Result<(f64, f64, Vec<CacheRecord>)>> = self
            .pool
            .install(|| prompts.par_iter().map(|p| self.fetch(p)).collect());
        let mut measurements = Vec::with_capacity(prompts.len());
        let mut fresh = Vec::new();
        for (i, r) in fetched.into_iter().enumerate() {
            let (p, n, recs) = r?;
            fresh.extend(recs);
            measurements.push(ProbeMeasurement::new(&feature.name, i, p, n)?);
        }
        self.cache.insert(&fresh)?;
        Ok(measurements)
    }

    /// Measurements for every feature of `ds`, in column order.
    pub fn probe_dataset(
        &self,
        ds: &TabularDataset,
        ts: &TemplateSet,
        use_descriptions: bool,
    ) -> Result<Vec<Vec<ProbeMeasurement>>> {
        ds.features
            .iter()
            .map(|f| {
                log::info!(target: "probe", "feature={} templates={}", f.name, ts.n_sent());
                self.probe_feature(f, &ds.target_description, ts, use_descriptions)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn mock(rules: &[(&str, f64, f64)]) -> Arc<MockBackend> {
        Arc::new(MockBackend::new(MockFixture {
            model_id: "mock".into(),
            rules: rules
                .iter()
                .map(|&(p, a, b)| MockRule {
                    pattern: p.into(),
                    positive: Some(a),
                    negative: Some(b),
                    tokens: BTreeMap::new(),
                })
                .collect(),
            default: None,
        }))
    }

    fn prober(backend: Arc<MockBackend>, cache: Arc<ProbeCache>) -> Prober {
        Prober::new(backend, cache, TokenVariants::default(), 4).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(preference_score(0.5, 0.5).unwrap(), 0.0);
        // ln 3 to 30 digits: 1.09861228866810969139524523692
        assert!((preference_score(0.6, 0.2).unwrap() - 1.098_612_288_668_109_7).abs() < 1e-12);
        assert!((preference_score(0.2, 0.6).unwrap() + 1.098_612_288_668_109_7).abs() < 1e-12);
    }

    #[test]
    fn score_floors_zero_and_rejects_invalid() {
        assert!(preference_score(0.0, 0.5).unwrap().is_finite());
        assert!(preference_score(-0.1, 0.5).is_err());
        assert!(preference_score(f64::NAN, 0.5).is_err());
        assert!(preference_score(0.2, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn score_identities(a in 1e-6f64..1.0, b in 1e-6f64..1.0, c in 1e-3f64..1e3) {
            let s = preference_score(a, b).unwrap();
            prop_assert!((s + preference_score(b, a).unwrap()).abs() < 1e-12);
            prop_assert!((s - preference_score(a * c, b * c).unwrap()).abs() < 1e-12);
            prop_assert!((s - preference_score_logit(a, b).unwrap()).abs() < 1e-9 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn score_tokens_from_fixture_and_cache() {
        let backend = mock(&[("cholesterol", 0.6, 0.2)]);
        let p = prober(backend.clone(), Arc::new(ProbeCache::in_memory()));
        let prompt = "The impact of cholesterol on heart disease is ";
        assert_eq!(p.score_tokens(prompt).unwrap(), (0.6, 0.2));
        assert_eq!(p.score_tokens(prompt).unwrap(), (0.6, 0.2));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn whitespace_variant_mass_is_used() {
        let mut tokens = BTreeMap::new();
        tokens.insert(" positive".to_string(), 0.3);
        tokens.insert(" negative".to_string(), 0.1);
        let backend = Arc::new(MockBackend::new(MockFixture {
            model_id: "m".into(),
            rules: vec![MockRule {
                pattern: "".into(),
                positive: None,
                negative: None,
                tokens,
            }],
            default: None,
        }));
        let p = Prober::new(
            backend,
            Arc::new(ProbeCache::in_memory()),
            TokenVariants::default(),
            1,
        )
        .unwrap();
        assert_eq!(p.score_tokens("x").unwrap(), (0.3, 0.1));
    }

    #[test]
    fn unscorable_prompt() {
        let p = prober(mock(&[("", 0.0, 0.0)]), Arc::new(ProbeCache::in_memory()));
        assert!(matches!(p.score_tokens("x"), Err(Error::Unscorable { .. })));
    }

    #[test]
    fn probe_feature_cardinality_and_warm_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let feature = FeatureMeta::numeric("chol").with_description("cholesterol");
        let ts = TemplateSet::default();

        let backend = mock(&[("cholesterol", 0.6, 0.2)]);
        let first = prober(backend.clone(), Arc::new(ProbeCache::open(&path).unwrap()))
            .probe_feature(&feature, "heart disease", &ts, true)
            .unwrap();
        assert_eq!(first.len(), 10);
        assert!(first.iter().all(|m| m.score == first[0].score));
        assert_eq!(
            first.iter().map(|m| m.template_index).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(backend.calls(), 10);
        let cache_text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(cache_text.lines().count(), 60);

        let warm_backend = mock(&[("cholesterol", 0.6, 0.2)]);
        let second = prober(
            warm_backend.clone(),
            Arc::new(ProbeCache::open(&path).unwrap()),
        )
        .probe_feature(&feature, "heart disease", &ts, true)
        .unwrap();
        assert_eq!(warm_backend.calls(), 0);
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
        assert_eq!(std::fs::read_to_string(&path).unwrap(), cache_text);
    }

    #[test]
    fn failing_template_aborts_feature() {
        // Only templates mentioning "impact" are answerable.
        let p = prober(
            mock(&[("impact", 0.5, 0.5)]),
            Arc::new(ProbeCache::in_memory()),
        );
        let r = p.probe_feature(
            &FeatureMeta::numeric("age"),
            "risk",
            &TemplateSet::default(),
            true,
        );
        assert!(matches!(r, Err(Error::Backend(_))));
    }

    #[test]
    fn cache_file_order_is_independent_of_concurrency() {
        let dir = tempfile::tempdir().unwrap();
        let feature = FeatureMeta::numeric("age");
        let mut texts = Vec::new();
        for threads in [1, 8] {
            let path = dir.path().join(format!("c{threads}.jsonl"));
            let p = Prober::new(
                mock(&[("", 0.3, 0.4)]),
                Arc::new(ProbeCache::open(&path).unwrap()),
                TokenVariants::default(),
                threads,
            )
            .unwrap();
            p.probe_feature(&feature, "risk", &TemplateSet::default(), true)
                .unwrap();
            texts.push(std::fs::read_to_string(&path).unwrap());
        }
        assert_eq!(texts[0], texts[1]);
    }
}

//! Coefficient priors: elicited from probe measurements or fixed baselines.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::FeatureMeta;
use crate::error::{Error, Result};
use crate::probe::{ProbeMeasurement, PROBABILITY_FLOOR};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorDist {
    Normal { mu: f64, sigma: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl PriorDist {
    pub fn normal(mu: f64, sigma: f64) -> Self {
        PriorDist::Normal { mu, sigma }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        PriorDist::Uniform { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorDist::Normal { mu, sigma }
                if mu.is_finite() && sigma.is_finite() && sigma > 0.0 =>
            {
                Ok(())
            }
            PriorDist::Uniform { lower, upper }
                if lower.is_finite() && upper.is_finite() && lower < upper =>
            {
                Ok(())
            }
            other => Err(Error::Elicitation(format!("invalid prior {other:?}"))),
        }
    }

    /// Log density at `x` on the coefficient scale.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorDist::Normal { mu, sigma } => {
                let z = (x - mu) / sigma;
                -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
            }
            PriorDist::Uniform { lower, upper } => {
                if (lower..=upper).contains(&x) {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePrior {
    pub feature: String,
    #[serde(flatten)]
    pub dist: PriorDist,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpretation {
    /// `sigma = alpha + gamma * spread`
    #[default]
    Stddev,
    /// `sigma^2 = alpha + gamma * spread`
    Variance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElicitationMethod {
    #[default]
    LogitVariance,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElicitationConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub interpretation: Interpretation,
    pub method: ElicitationMethod,
    /// Multiplier from mean binary entropy (nats) to prior sigma.
    pub entropy_scale: f64,
    /// Lower bound on sigma.
    pub sigma_min: f64,
    pub n_sent: usize,
    pub intercept: PriorDist,
}

impl Default for ElicitationConfig {
    fn default() -> Self {
        ElicitationConfig {
            alpha: 0.2,
            gamma: 2.0,
            interpretation: Interpretation::Stddev,
            method: ElicitationMethod::LogitVariance,
            entropy_scale: 0.65,
            sigma_min: 0.01,
            n_sent: 10,
            intercept: PriorDist::normal(0.0, 1.0),
        }
    }
}

impl ElicitationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("elicitation: {m}")));
        if !(self.alpha >= 0.0 && self.gamma >= 0.0) {
            return bad("alpha and gamma must be non-negative");
        }
        if self.alpha + self.gamma <= 0.0 {
            return bad("alpha + gamma must be positive");
        }
        if !(self.entropy_scale > 0.0) || !(self.sigma_min > 0.0) {
            return bad("entropy_scale and sigma_min must be positive");
        }
        if self.n_sent == 0 {
            return bad("n_sent must be positive");
        }
        self.intercept.validate()
    }
}

/// Checks the list is non-empty and single-feature; returns the scores sorted
/// so that downstream sums do not depend on list order.
fn sorted_scores(ms: &[ProbeMeasurement]) -> Result<(&str, Vec<f64>)> {
    let first = ms
        .first()
        .ok_or_else(|| Error::Elicitation("no measurements".into()))?;
    if let Some(m) = ms.iter().find(|m| m.feature != first.feature) {
        return Err(Error::Elicitation(format!(
            "measurements mix features `{}` and `{}`",
            first.feature, m.feature
        )));
    }
    let mut scores: Vec<f64> = ms.iter().map(|m| m.score).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score for `{}`", first.feature)));
    }
    scores.sort_by(f64::total_cmp);
    Ok((&first.feature, scores))
}

fn binary_entropy(q: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(q) + term(1.0 - q)
}

/// Normal prior from the mean and population spread of the preference scores.
pub fn elicit_prior(ms: &[ProbeMeasurement], cfg: &ElicitationConfig) -> Result<FeaturePrior> {
    let (feature, scores) = sorted_scores(ms)?;
    let mu = crate::math::mean(&scores);
    let spread = crate::math::population_std(&scores);
    let raw = cfg.alpha + cfg.gamma * spread;
    let mut sigma = match cfg.interpretation {
        Interpretation::Stddev => raw,
        Interpretation::Variance => raw.sqrt(),
    };
    if !(sigma > 0.0) {
        sigma = cfg.sigma_min;
    }
    Ok(FeaturePrior {
        feature: feature.to_string(),
        dist: PriorDist::normal(mu, sigma),
    })
}

/// Normal prior whose sigma is the scaled mean binary entropy of the
/// normalized positive probability.
pub fn elicit_prior_entropy(
    ms: &[ProbeMeasurement],
    cfg: &ElicitationConfig,
) -> Result<FeaturePrior> {
    let (feature, scores) = sorted_scores(ms)?;
    let mut entropies: Vec<f64> = ms
        .iter()
        .map(|m| {
            let p = m.p_positive.max(PROBABILITY_FLOOR);
            let n = m.p_negative.max(PROBABILITY_FLOOR);
            binary_entropy(p / (p + n))
        })
        .collect();
    entropies.sort_by(f64::total_cmp);
    let sigma = (cfg.entropy_scale * crate::math::mean(&entropies)).max(cfg.sigma_min);
    Ok(FeaturePrior {
        feature: feature.to_string(),
        dist: PriorDist::normal(crate::math::mean(&scores), sigma),
    })
}

/// Dispatches on `cfg.method`, using the first `cfg.n_sent` measurements.
pub fn elicit(ms: &[ProbeMeasurement], cfg: &ElicitationConfig) -> Result<FeaturePrior> {
    if ms.len() < cfg.n_sent {
        return Err(Error::InsufficientTemplates {
            feature: ms.first().map(|m| m.feature.clone()).unwrap_or_default(),
            needed: cfg.n_sent,
            available: ms.len(),
        });
    }
    let ms = &ms[..cfg.n_sent];
    match cfg.method {
        ElicitationMethod::LogitVariance => elicit_prior(ms, cfg),
        ElicitationMethod::Entropy => elicit_prior_entropy(ms, cfg),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ElicitationMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<Interpretation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

const INTERCEPT_KEY: &str = "_intercept";
const META_KEY: &str = "meta";

/// Priors for every coefficient plus the intercept.
///
/// JSON form: `{feature: {family, ...}, ..., "_intercept": {...}, "meta": {...}}`
/// with features in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSet {
    pub priors: Vec<FeaturePrior>,
    pub intercept: PriorDist,
    pub meta: PriorMeta,
}

impl PriorSet {
    pub fn new(priors: Vec<FeaturePrior>, intercept: PriorDist, meta: PriorMeta) -> Result<Self> {
        for p in &priors {
            if p.feature == INTERCEPT_KEY || p.feature == META_KEY {
                return Err(Error::Config(format!(
                    "feature name `{}` is reserved in prior files",
                    p.feature
                )));
            }
            p.dist.validate()?;
        }
        intercept.validate()?;
        Ok(PriorSet {
            priors,
            intercept,
            meta,
        })
    }

    /// Coefficient priors in the order of `features`.
    pub fn aligned(&self, features: &[FeatureMeta]) -> Result<Vec<PriorDist>> {
        features
            .iter()
            .map(|f| {
                self.priors
                    .iter()
                    .find(|p| p.feature == f.name)
                    .map(|p| p.dist)
                    .ok_or_else(|| Error::Config(format!("no prior for feature `{}`", f.name)))
            })
            .collect()
    }

    /// Replaces every normal sigma (intercept included) with `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let set = |d: PriorDist| match d {
            PriorDist::Normal { mu, .. } => PriorDist::normal(mu, sigma),
            u => u,
        };
        PriorSet {
            priors: self
                .priors
                .iter()
                .map(|p| FeaturePrior {
                    feature: p.feature.clone(),
                    dist: set(p.dist),
                })
                .collect(),
            intercept: set(self.intercept),
            meta: self.meta.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for p in &self.priors {
            map.insert(
                p.feature.clone(),
                serde_json::to_value(p.dist).unwrap_or_default(),
            );
        }
        map.insert(
            INTERCEPT_KEY.into(),
            serde_json::to_value(self.intercept).unwrap_or_default(),
        );
        map.insert(
            META_KEY.into(),
            serde_json::to_value(&self.meta).unwrap_or_default(),
        );
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| Error::Config("prior file must be a JSON object".into()))?;
        let mut priors = Vec::new();
        let mut intercept = None;
        let mut meta = PriorMeta::default();
        for (k, v) in map {
            match k.as_str() {
                INTERCEPT_KEY => intercept = Some(serde_json::from_value(v.clone())?),
                META_KEY => meta = serde_json::from_value(v.clone())?,
                _ => priors.push(FeaturePrior {
                    feature: k.clone(),
                    dist: serde_json::from_value(v.clone())?,
                }),
            }
        }
        let intercept =
            intercept.ok_or_else(|| Error::Config("prior file lacks `_intercept`".into()))?;
        PriorSet::new(priors, intercept, meta)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PriorSet::from_json(&serde_json::from_str(&text)?)
    }
}

impl Serialize for PriorSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PriorSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        PriorSet::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// Elicited priors for every feature; `measurements[j]` belongs to `features[j]`.
pub fn elicit_prior_set(
    features: &[FeatureMeta],
    measurements: &[Vec<ProbeMeasurement>],
    cfg: &ElicitationConfig,
    model_id: &str,
) -> Result<PriorSet> {
    cfg.validate()?;
    if features.len() != measurements.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: measurements.len(),
        });
    }
    let priors = features
        .iter()
        .zip(measurements)
        .map(|(f, ms)| {
            let mut p = elicit(ms, cfg)?;
            if p.feature != f.name {
                return Err(Error::Elicitation(format!(
                    "measurements for `{}` supplied for feature `{}`",
                    p.feature, f.name
                )));
            }
            p.feature = f.name.clone();
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    PriorSet::new(
        priors,
        cfg.intercept,
        PriorMeta {
            source: Some("loid".into()),
            alpha: Some(cfg.alpha),
            gamma: Some(cfg.gamma),
            method: Some(cfg.method),
            interpretation: Some(cfg.interpretation),
            n_sent: Some(cfg.n_sent),
            model_id: Some(model_id.to_string()),
            ..PriorMeta::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "normal_0_1")]
    Normal0_1,
    #[serde(rename = "normal_0_045")]
    Normal0_045,
    #[serde(rename = "uniform_m1_1")]
    UniformM1_1,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Normal0_1 => "normal_0_1",
            BaselineKind::Normal0_045 => "normal_0_045",
            BaselineKind::UniformM1_1 => "uniform_m1_1",
        }
    }

    pub fn dist(self) -> PriorDist {
        match self {
            BaselineKind::Normal0_1 => PriorDist::normal(0.0, 1.0),
            BaselineKind::Normal0_045 => PriorDist::normal(0.0, 0.45),
            BaselineKind::UniformM1_1 => PriorDist::uniform(-1.0, 1.0),
        }
    }
}

/// The same fixed prior for every feature, plus `intercept`.
pub fn baseline_priors(
    kind: BaselineKind,
    features: &[FeatureMeta],
    intercept: PriorDist,
) -> Result<PriorSet> {
    PriorSet::new(
        features
            .iter()
            .map(|f| FeaturePrior {
                feature: f.name.clone(),
                dist: kind.dist(),
            })
            .collect(),
        intercept,
        PriorMeta {
            source: Some(kind.as_str().into()),
            ..PriorMeta::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meas(scores: &[f64]) -> Vec<ProbeMeasurement> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ProbeMeasurement {
                feature: "f".into(),
                template_index: i,
                p_positive: 0.5,
                p_negative: 0.5,
                score: s,
            })
            .collect()
    }

    fn probs(pairs: &[(f64, f64)]) -> Vec<ProbeMeasurement> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(p, n))| ProbeMeasurement::new("f", i, p, n).unwrap())
            .collect()
    }

    fn features(n: usize) -> Vec<FeatureMeta> {
        (0..n)
            .map(|j| FeatureMeta::numeric(format!("x{j}")))
            .collect()
    }

    #[test]
    fn zero_spread_gives_alpha() {
        let p = elicit_prior(&meas(&[0.7; 10]), &ElicitationConfig::default()).unwrap();
        assert_eq!(p.dist, PriorDist::normal(0.7, 0.2));
    }

    #[test]
    fn one_and_two() {
        let p = elicit_prior(&meas(&[1.0, 2.0]), &ElicitationConfig::default()).unwrap();
        assert_eq!(p.dist, PriorDist::normal(1.5, 1.2));
        let var = ElicitationConfig {
            interpretation: Interpretation::Variance,
            ..ElicitationConfig::default()
        };
        let p = elicit_prior(&meas(&[1.0, 2.0]), &var).unwrap();
        assert_eq!(p.dist, PriorDist::normal(1.5, 1.2f64.sqrt()));
    }

    #[test]
    fn empty_and_mixed() {
        let cfg = ElicitationConfig::default();
        assert!(elicit_prior(&[], &cfg).is_err());
        let mut ms = meas(&[1.0, 2.0]);
        ms[1].feature = "g".into();
        assert!(elicit_prior(&ms, &cfg).is_err());
        assert!(elicit_prior_entropy(&ms, &cfg).is_err());
    }

    #[test]
    fn entropy_at_equal_probabilities() {
        let cfg = ElicitationConfig::default();
        let p = elicit_prior_entropy(&probs(&[(0.3, 0.3); 10]), &cfg).unwrap();
        let PriorDist::Normal { mu, sigma } = p.dist else {
            panic!()
        };
        assert_eq!(mu, 0.0);
        assert!((sigma - std::f64::consts::LN_2 * 0.65).abs() < 1e-15);
    }

    #[test]
    fn entropy_certainty_floors() {
        let cfg = ElicitationConfig::default();
        let p = elicit_prior_entropy(&probs(&[(0.9, 0.0); 3]), &cfg).unwrap();
        let PriorDist::Normal { sigma, .. } = p.dist else {
            panic!()
        };
        assert_eq!(sigma, cfg.sigma_min);
    }

    #[test]
    fn entropy_single_measurement() {
        let cfg = ElicitationConfig {
            entropy_scale: 1.0,
            ..ElicitationConfig::default()
        };
        let p = elicit_prior_entropy(&probs(&[(0.6, 0.2)]), &cfg).unwrap();
        let PriorDist::Normal { sigma, .. } = p.dist else {
            panic!()
        };
        // H(0.75) in nats: 0.562335144618808350288...
        assert!((sigma - 0.562_335_144_618_808_4).abs() < 1e-14);
    }

    #[test]
    fn baselines() {
        let s = baseline_priors(
            BaselineKind::Normal0_1,
            &features(3),
            PriorDist::normal(0.0, 1.0),
        )
        .unwrap();
        assert_eq!(s.priors.len(), 3);
        assert!(s
            .priors
            .iter()
            .all(|p| p.dist == PriorDist::normal(0.0, 1.0)));
        let s = baseline_priors(
            BaselineKind::UniformM1_1,
            &features(2),
            PriorDist::normal(0.0, 1.0),
        )
        .unwrap();
        assert!(s
            .priors
            .iter()
            .all(|p| p.dist == PriorDist::uniform(-1.0, 1.0)));
        let s = baseline_priors(
            BaselineKind::Normal0_045,
            &features(1),
            PriorDist::normal(0.0, 1.0),
        )
        .unwrap();
        assert_eq!(s.priors[0].dist, PriorDist::normal(0.0, 0.45));
        assert_eq!(s.intercept, PriorDist::normal(0.0, 1.0));
    }

    #[test]
    fn elicit_respects_n_sent() {
        let cfg = ElicitationConfig {
            n_sent: 2,
            ..ElicitationConfig::default()
        };
        let p = elicit(&meas(&[1.0, 2.0, 100.0]), &cfg).unwrap();
        assert_eq!(p.dist, PriorDist::normal(1.5, 1.2));
        let cfg = ElicitationConfig {
            n_sent: 4,
            ..ElicitationConfig::default()
        };
        assert!(matches!(
            elicit(&meas(&[1.0, 2.0, 100.0]), &cfg),
            Err(Error::InsufficientTemplates {
                needed: 4,
                available: 3,
                ..
            })
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = ElicitationConfig {
            alpha: 0.0,
            gamma: 0.0,
            ..ElicitationConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ElicitationConfig::default().validate().is_ok());
    }

    #[test]
    fn reserved_names_rejected() {
        let r = PriorSet::new(
            vec![FeaturePrior {
                feature: "meta".into(),
                dist: PriorDist::normal(0.0, 1.0),
            }],
            PriorDist::normal(0.0, 1.0),
            PriorMeta::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn json_layout() {
        let s = baseline_priors(
            BaselineKind::Normal0_1,
            &features(1),
            PriorDist::normal(0.0, 1.0),
        )
        .unwrap();
        let v = s.to_json();
        assert_eq!(v["x0"]["family"], "normal");
        assert_eq!(v["_intercept"]["sigma"], 1.0);
        assert_eq!(v["meta"]["source"], "normal_0_1");
    }

    proptest! {
        #[test]
        fn prior_set_json_round_trip(
            mus in proptest::collection::vec(-5.0f64..5.0, 1..8),
            sig in 0.01f64..3.0,
            uniform_at in 0usize..8,
        ) {
            let priors = mus.iter().enumerate().map(|(j, &mu)| FeaturePrior {
                feature: format!("feat {j}"),
                dist: if j == uniform_at { PriorDist::uniform(mu - 1.0, mu + sig) } else { PriorDist::normal(mu, sig * (j as f64 + 1.0)) },
            }).collect();
            let set = PriorSet::new(priors, PriorDist::normal(0.1, 2.0), PriorMeta { alpha: Some(0.2), model_id: Some("m".into()), ..PriorMeta::default() }).unwrap();
            let text = serde_json::to_string(&set).unwrap();
            let back: PriorSet = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, set);
        }

        #[test]
        fn mean_is_permutation_invariant(mut scores in proptest::collection::vec(-4.0f64..4.0, 1..12), seed in 0u64..1000) {
            let cfg = ElicitationConfig::default();
            let a = elicit_prior(&meas(&scores), &cfg).unwrap();
            // deterministic shuffle
            let n = scores.len();
            for i in (1..n).rev() {
                let j = (crate::math::mix_seed(seed, i as u64) % (i as u64 + 1)) as usize;
                scores.swap(i, j);
            }
            let b = elicit_prior(&meas(&scores), &cfg).unwrap();
            prop_assert_eq!(a.dist, b.dist);
        }

        #[test]
        fn sigma_monotone_in_spread(c in -3.0f64..3.0, s1 in 0.0f64..2.0, s2 in 0.0f64..2.0, alpha in 0.0f64..1.0, gamma in 0.0f64..4.0) {
            prop_assume!(alpha + gamma > 0.0);
            let cfg = ElicitationConfig { alpha, gamma, ..ElicitationConfig::default() };
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let sig = |s: f64| match elicit_prior(&meas(&[c - s, c + s]), &cfg).unwrap().dist {
                PriorDist::Normal { sigma, .. } => sigma,
                _ => unreachable!(),
            };
            prop_assert!(sig(lo) <= sig(hi) + 1e-12);
        }

        #[test]
        fn gamma_zero_gives_alpha(scores in proptest::collection::vec(-4.0f64..4.0, 1..12), alpha in 0.01f64..1.0) {
            let cfg = ElicitationConfig { alpha, gamma: 0.0, ..ElicitationConfig::default() };
            match elicit_prior(&meas(&scores), &cfg).unwrap().dist {
                PriorDist::Normal { sigma, .. } => prop_assert_eq!(sigma, alpha),
                _ => unreachable!(),
            }
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can report the probability that `token` immediately follows `prompt`.
pub trait ScoreBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Probabilities for the candidate tokens. Tokens the backend cannot
    /// score are left out of the map.
    fn score(&self, prompt: &str, tokens: &[String]) -> Result<BTreeMap<String, f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        fixture: PathBuf,
    },
    Http {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_id: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
    /// Answers only from the probe cache.
    Offline {
        model_id: String,
    },
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn ScoreBackend>> {
        Ok(match self {
            BackendConfig::Mock { fixture } => Arc::new(MockBackend::from_file(fixture)?),
            BackendConfig::Http {
                url,
                model_id,
                timeout_secs,
                max_retries,
            } => Arc::new(HttpBackend::new(
                url,
                model_id.clone(),
                Duration::from_secs_f64(*timeout_secs),
                *max_retries,
            )),
            BackendConfig::Offline { model_id } => Arc::new(OfflineBackend {
                model_id: model_id.clone(),
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Matches prompts containing this substring.
    pub pattern: String,
    #[serde(default)]
    pub positive: Option<f64>,
    #[serde(default)]
    pub negative: Option<f64>,
    /// Explicit per-token probabilities, taking precedence over the shorthand.
    #[serde(default)]
    pub tokens: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default = "mock_id")]
    pub model_id: String,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// `(P+, P-)` for prompts no rule matches.
    #[serde(default)]
    pub default: Option<(f64, f64)>,
}

fn mock_id() -> String {
    "mock".into()
}

/// Fixture-driven backend. The first rule whose pattern occurs in the prompt
/// answers; its `positive` mass goes to the first requested token that reads
/// "positive" once trimmed and lowercased, and likewise for `negative`.
#[derive(Debug)]
pub struct MockBackend {
    fixture: MockFixture,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        MockBackend {
            fixture,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixture = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(MockBackend::new(fixture))
    }

    /// Number of `score` requests served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ScoreBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.fixture.model_id
    }

    fn score(&self, prompt: &str, tokens: &[String]) -> Result<BTreeMap<String, f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let rule = self
            .fixture
            .rules
            .iter()
            .find(|r| prompt.contains(&r.pattern));
        let (explicit, pos, neg) = match (rule, self.fixture.default) {
            (Some(r), _) => (Some(&r.tokens), r.positive, r.negative),
            (None, Some((p, n))) => (None, Some(p), Some(n)),
            (None, None) => {
                return Err(Error::Backend(format!(
                    "mock fixture has no rule for prompt `{prompt}`"
                )))
            }
        };
        let mut out = BTreeMap::new();
        if let Some(explicit) = explicit {
            for t in tokens {
                if let Some(&p) = explicit.get(t) {
                    out.insert(t.clone(), p);
                }
            }
        }
        for (word, mass) in [("positive", pos), ("negative", neg)] {
            let Some(mass) = mass else { continue };
            let slot = tokens
                .iter()
                .find(|t| t.trim().to_lowercase() == word && !out.contains_key(*t));
            if let Some(t) = slot {
                out.insert(t.clone(), mass);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprobs: BTreeMap<String, Option<f64>>,
}

/// `POST {"prompt", "tokens"}` → `{"logprobs": {token: logprob}}`.
pub struct HttpBackend {
    url: String,
    model_id: String,
    agent: ureq::Agent,
    max_retries: u32,
}

impl HttpBackend {
    pub fn new(url: &str, model_id: Option<String>, timeout: Duration, max_retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            url: url.to_string(),
            model_id: model_id.unwrap_or_else(|| format!("http:{url}")),
            agent,
            max_retries,
        }
    }

    fn request(
        &self,
        prompt: &str,
        tokens: &[String],
    ) -> std::result::Result<ScoreResponse, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(ScoreRequest { prompt, tokens })
            .map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<ScoreResponse>()
            .map_err(|e| e.to_string())
    }
}

impl ScoreBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, prompt: &str, tokens: &[String]) -> Result<BTreeMap<String, f64>> {
        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            match self.request(prompt, tokens) {
                Ok(resp) => {
                    return Ok(resp
                        .logprobs
                        .into_iter()
                        .filter_map(|(t, lp)| lp.map(|lp| (t, lp.exp())))
                        .collect())
                }
                Err(e) => {
                    log::warn!(target: "probe", "request to {} failed (attempt {}): {e}", self.url, attempt + 1);
                    last_err = e;
                }
            }
        }
        Err(Error::Backend(format!(
            "{} unreachable after {} attempts: {last_err}",
            self.url,
            self.max_retries + 1
        )))
    }
}

pub struct OfflineBackend {
    model_id: String,
}

impl ScoreBackend for OfflineBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, prompt: &str, _tokens: &[String]) -> Result<BTreeMap<String, f64>> {
        Err(Error::Backend(format!(
            "offline backend: probe cache has no entry for prompt `{prompt}`"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn mock_shorthand_goes_to_first_variant() {
        let mock = MockBackend::new(MockFixture {
            model_id: "m".into(),
            rules: vec![MockRule {
                pattern: "cholesterol".into(),
                positive: Some(0.6),
                negative: Some(0.2),
                tokens: BTreeMap::new(),
            }],
            default: None,
        });
        let out = mock
            .score(
                "The impact of cholesterol on heart disease is ",
                &toks(&[" positive", "positive", " negative", "negative"]),
            )
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[" positive"], 0.6);
        assert_eq!(out[" negative"], 0.2);
        assert!(mock.score("unrelated", &toks(&[" positive"])).is_err());
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn mock_explicit_tokens_and_default() {
        let mut tokens = BTreeMap::new();
        tokens.insert("positive".to_string(), 0.1);
        let mock = MockBackend::new(MockFixture {
            model_id: "m".into(),
            rules: vec![MockRule {
                pattern: "age".into(),
                positive: None,
                negative: Some(0.3),
                tokens,
            }],
            default: Some((0.4, 0.4)),
        });
        let out = mock
            .score("age", &toks(&[" positive", "positive", " negative"]))
            .unwrap();
        assert_eq!(out.get(" positive"), None);
        assert_eq!(out["positive"], 0.1);
        assert_eq!(out[" negative"], 0.3);
        let out = mock
            .score("other", &toks(&[" positive", " negative"]))
            .unwrap();
        assert_eq!(out[" positive"], 0.4);
    }

    #[test]
    fn backend_config_json() {
        let cfg: BackendConfig =
            serde_json::from_str(r#"{"kind":"http","url":"http://localhost:1"}"#).unwrap();
        assert_eq!(
            cfg,
            BackendConfig::Http {
                url: "http://localhost:1".into(),
                model_id: None,
                timeout_secs: 30.0,
                max_retries: 3
            }
        );
    }

    #[test]
    fn offline_always_errors() {
        let b = BackendConfig::Offline {
            model_id: "remote-model".into(),
        }
        .build()
        .unwrap();
        assert_eq!(b.model_id(), "remote-model");
        assert!(matches!(b.score("p", &[]), Err(Error::Backend(_))));
    }
}

use std::path::Path;

use crate::error::{Error, Result};

const PLACEHOLDER: &str = "{}";

/// Prompt prefixes with a feature slot followed by a target slot. Each ends
/// right before the sentiment-bearing word.
pub const DEFAULT_TEMPLATES: [&str; 10] = [
    "The impact of {} on {} is ",
    "The relationship between {} and {} is ",
    "The role of {} in {} is ",
    "When considering {}, the effect on {} is ",
    "The correlation between {} and {} is ",
    "The influence of {} on {} is ",
    "The association between {} and {} is ",
    "The contribution of {} to {} is ",
    "In general, the effect of {} on {} is ",
    "The link between {} and {} is ",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<String>,
    n_sent: usize,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            templates: DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect(),
            n_sent: DEFAULT_TEMPLATES.len(),
        }
    }
}

impl TemplateSet {
    pub fn new(templates: Vec<String>, n_sent: usize) -> Result<Self> {
        for t in &templates {
            let found = t.matches(PLACEHOLDER).count();
            if found != 2 {
                return Err(Error::Template {
                    template: t.clone(),
                    found,
                });
            }
        }
        if n_sent == 0 || n_sent > templates.len() {
            return Err(Error::Config(format!(
                "n_sent must be in 1..={}, got {n_sent}",
                templates.len()
            )));
        }
        Ok(TemplateSet { templates, n_sent })
    }

    /// One template per line; blank lines are skipped. Trailing whitespace is
    /// kept since it is part of the prompt prefix.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let templates: Vec<String> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
        let n = templates.len();
        TemplateSet::new(templates, n)
    }

    /// Same templates, using only the first `n_sent`.
    pub fn with_n_sent(&self, n_sent: usize) -> Result<Self> {
        TemplateSet::new(self.templates.clone(), n_sent)
    }

    pub fn n_sent(&self) -> usize {
        self.n_sent
    }

    pub fn available(&self) -> usize {
        self.templates.len()
    }

    pub fn active(&self) -> &[String] {
        &self.templates[..self.n_sent]
    }
}

fn fill(template: &str, feature: &str, target: &str) -> String {
    let mut parts = template.splitn(3, PLACEHOLDER);
    let head = parts.next().unwrap_or_default();
    let mid = parts.next().unwrap_or_default();
    let tail = parts.next().unwrap_or_default();
    format!("{head}{feature}{mid}{target}{tail}")
}

/// Renders the active templates of `ts`, in declaration order.
pub fn render_prompts(feature_desc: &str, target_desc: &str, ts: &TemplateSet) -> Vec<String> {
    ts.active()
        .iter()
        .map(|t| fill(t, feature_desc, target_desc))
        .collect()
}

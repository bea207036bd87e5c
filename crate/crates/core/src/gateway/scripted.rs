use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{count_tokens, GenerationRequest, GenerationResult, Generator};
use crate::error::{Error, Result};

/// One response rule. Exactly one of `pattern` (a regex) or `contains` (a
/// literal substring) selects requests; `response` may reference regex
/// captures as `$1` or `${name}` (`$0` echoes the whole match).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn pattern(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            pattern: Some(pattern.into()),
            contains: None,
            response: response.into(),
        }
    }

    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            pattern: None,
            contains: Some(needle.into()),
            response: response.into(),
        }
    }
}

#[derive(Debug)]
enum Matcher {
    Regex(Regex),
    Literal(String),
}

/// Deterministic test double: the reply is a pure function of the request
/// text. Rules are tried in declared order and the first match wins.
#[derive(Debug)]
pub struct ScriptedModel {
    rules: Vec<(Matcher, String)>,
    default: Option<String>,
    latency_ms: u64,
}

impl ScriptedModel {
    pub fn new(rules: Vec<ScriptRule>, default: Option<String>) -> Result<Self> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let matcher = match (r.pattern, r.contains) {
                    (Some(p), None) => Matcher::Regex(
                        Regex::new(&p).map_err(|e| Error::Config(format!("script rule {i}: {e}")))?,
                    ),
                    (None, Some(c)) => Matcher::Literal(c),
                    _ => {
                        return Err(Error::Config(format!(
                            "script rule {i}: set exactly one of `pattern` or `contains`"
                        )))
                    }
                };
                Ok((matcher, r.response))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScriptedModel {
            rules,
            default,
            latency_ms: 0,
        })
    }

    /// Every reply is `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        ScriptedModel {
            rules: Vec::new(),
            default: Some(response.into()),
            latency_ms: 0,
        }
    }

    /// Simulated latency reported for every call.
    pub fn with_latency(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }

    pub fn respond(&self, text: &str) -> Result<String> {
        for (matcher, response) in &self.rules {
            match matcher {
                Matcher::Literal(needle) if text.contains(needle.as_str()) => return Ok(response.clone()),
                Matcher::Regex(re) => {
                    if let Some(caps) = re.captures(text) {
                        let mut out = String::new();
                        caps.expand(response, &mut out);
                        return Ok(out);
                    }
                }
                Matcher::Literal(_) => {}
            }
        }
        self.default.clone().ok_or_else(|| {
            let head: String = text.chars().take(80).collect();
            Error::Config(format!("no script rule matches request {head:?} and no default is set"))
        })
    }
}

impl Generator for ScriptedModel {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        let prompt = request.full_text();
        let text = self.respond(&prompt)?;
        Ok(GenerationResult {
            prompt_tokens: count_tokens(&prompt),
            completion_tokens: count_tokens(&text),
            text,
            latency: self.latency_ms,
        })
    }
}

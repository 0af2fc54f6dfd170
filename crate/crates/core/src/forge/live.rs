//! A provider backed by a chat-completion HTTP endpoint, with an on-disk
//! response cache so runs can be replayed.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::strip_fences;
use super::provider::{
    count_tokens, fix_execution_prompt, fix_semantics_prompt, refine_prompt, semantic_check_prompt, DraftRequest,
    LlmProvider, ProviderCall, ProviderError, RefineRequest, SemanticVerdict,
};
use crate::model::TemplateSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_key_env() -> String {
    "SQLSHAPER_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedResponse {
    content: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    api_key: String,
    calls: Vec<ProviderCall>,
}

const SYSTEM: &str = "You write PostgreSQL query templates for database benchmarking.";

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ProviderError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { config, client, api_key, calls: vec![] })
    }

    fn cache_path(&self, prompt: &str) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(self.config.model.as_bytes());
        h.update(b"\n");
        h.update(prompt.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn complete(&mut self, operation: &str, prompt: &str) -> Result<String, ProviderError> {
        let cache = self.cache_path(prompt);
        if let Some(path) = &cache {
            if let Ok(text) = fs::read_to_string(path) {
                if let Ok(hit) = serde_json::from_str::<CachedResponse>(&text) {
                    self.calls.push(ProviderCall {
                        operation: operation.into(),
                        prompt_tokens: hit.prompt_tokens,
                        completion_tokens: hit.completion_tokens,
                        cached: true,
                    });
                    return Ok(hit.content);
                }
            }
        }
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM},
                {"role": "user", "content": prompt},
            ],
        });
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Request(e.to_string()))?;
        let status = response.status();
        let value: serde_json::Value = response.json().map_err(|e| ProviderError::Response(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Request(format!("HTTP {status}: {value}")));
        }
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Response("no message content in response".into()))?
            .to_string();
        let prompt_tokens = value["usage"]["prompt_tokens"].as_u64().unwrap_or_else(|| count_tokens(prompt));
        let completion_tokens = value["usage"]["completion_tokens"].as_u64().unwrap_or_else(|| count_tokens(&content));
        if let Some(path) = &cache {
            let record = CachedResponse { content: content.clone(), prompt_tokens, completion_tokens };
            if let Some(dir) = path.parent() {
                let _ = fs::create_dir_all(dir);
            }
            if let Err(e) = fs::write(path, serde_json::to_string(&record).expect("record serializes")) {
                log::warn!("cannot write provider cache {}: {e}", path.display());
            }
        }
        self.calls.push(ProviderCall { operation: operation.into(), prompt_tokens, completion_tokens, cached: false });
        Ok(content)
    }
}

/// Reads the first JSON object in `text` as a verdict.
pub fn parse_verdict(text: &str) -> Result<SemanticVerdict, ProviderError> {
    let start = text.find('{').ok_or_else(|| ProviderError::Response("no JSON object in verdict".into()))?;
    let end = text.rfind('}').ok_or_else(|| ProviderError::Response("no JSON object in verdict".into()))?;
    let mut verdict: SemanticVerdict = serde_json::from_str(&text[start..=end])
        .map_err(|e| ProviderError::Response(format!("bad verdict: {e}")))?;
    if !verdict.satisfied && verdict.violations.is_empty() {
        verdict.violations.push("the model reported unspecified violations".into());
    }
    Ok(verdict)
}

impl LlmProvider for LiveProvider {
    fn generate(&mut self, request: &DraftRequest<'_>) -> Result<String, ProviderError> {
        self.complete("generate", request.prompt).map(|t| strip_fences(&t))
    }

    fn validate_semantics(&mut self, template: &str, spec: &TemplateSpec) -> Result<SemanticVerdict, ProviderError> {
        let text = self.complete("validate_semantics", &semantic_check_prompt(template, spec))?;
        parse_verdict(&text)
    }

    fn fix_semantics(
        &mut self,
        template: &str,
        spec: &TemplateSpec,
        violations: &[String],
    ) -> Result<String, ProviderError> {
        self.complete("fix_semantics", &fix_semantics_prompt(template, spec, violations)).map(|t| strip_fences(&t))
    }

    fn fix_execution(&mut self, template: &str, errors: &[String]) -> Result<String, ProviderError> {
        self.complete("fix_execution", &fix_execution_prompt(template, errors)).map(|t| strip_fences(&t))
    }

    fn refine_template(&mut self, request: &RefineRequest<'_>) -> Result<String, ProviderError> {
        self.complete("refine_template", &refine_prompt(request)).map(|t| strip_fences(&t))
    }

    fn calls(&self) -> &[ProviderCall] {
        &self.calls
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        let v = parse_verdict("Sure.\n{\"satisfied\": false, \"violations\": [\"needs GROUP BY\"]}").unwrap();
        assert!(!v.satisfied);
        assert_eq!(v.violations, vec!["needs GROUP BY"]);
        let v = parse_verdict("{\"satisfied\": false}").unwrap();
        assert_eq!(v.violations.len(), 1);
        assert!(parse_verdict("yes").is_err());
    }

    #[test]
    fn missing_key_is_config_error() {
        let cfg = LiveConfig {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            model: "m".into(),
            api_key_env: "SQLSHAPER_TEST_KEY_THAT_IS_NOT_SET".into(),
            timeout_secs: 1,
            cache_dir: None,
        };
        assert!(matches!(LiveProvider::new(cfg), Err(ProviderError::Config(_))));
    }
}

//! Chat-completion client for a real LLM endpoint.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChoiceQuery, NameQuery, Oracle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveOracleConfig {
    /// Full URL of an OpenAI-compatible `chat/completions` endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub in_flight: usize,
    /// Total attempts per request.
    pub retries: usize,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LiveOracleConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            in_flight: 4,
            retries: 3,
            backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug)]
pub struct LiveOracle {
    cfg: LiveOracleConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveOracle {
    /// Fails immediately when the API key variable is unset.
    pub fn from_env(cfg: LiveOracleConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            Error::Config(format!("live oracle requires the {} environment variable", cfg.api_key_env))
        })?;
        Ok(Self::with_key(cfg, api_key))
    }

    pub fn with_key(cfg: LiveOracleConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Self { cfg, api_key, agent }
    }

    fn request_once(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Error::Oracle(format!("request to {} failed: {e}", self.cfg.endpoint)))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Oracle(format!("unreadable response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Oracle("response has no choices[0].message.content".into()))
    }

    /// Retries with exponential backoff, `retries` attempts in total.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let attempts = self.cfg.retries.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match self.request_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    warn!("oracle attempt {}/{attempts} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < attempts {
                        thread::sleep(Duration::from_millis(self.cfg.backoff_ms << attempt));
                    }
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Oracle("no attempt made".into())))
    }
}

impl Oracle for LiveOracle {
    fn complete_choice(&self, q: &ChoiceQuery<'_>) -> Result<String> {
        self.complete(q.prompt)
    }

    fn complete_name(&self, q: &NameQuery<'_>) -> Result<String> {
        self.complete(q.prompt)
    }

    fn is_live(&self) -> bool {
        true
    }

    fn in_flight(&self) -> usize {
        self.cfg.in_flight.max(1)
    }
}

//! Chat-completion backend over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, ReasonRequest, ReasonerError};

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    seed: Option<u64>,
    max_retries: u32,
    backoff: Duration,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, ReasonerError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| ReasonerError::Config("http_chat backend needs an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            seed: cfg.seed,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string().as_bytes())
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let retry = status == 429 || status >= 500;
            return Err(Attempt::Status {
                status,
                body: text,
                retry,
            });
        }
        completion_text(&text).ok_or(Attempt::Status {
            status,
            body: text,
            retry: false,
        })
    }
}

enum Attempt {
    Transport(String),
    Status { status: u16, body: String, retry: bool },
}

/// `choices[0].message.content`, or `choices[0].text` for completion-style replies.
fn completion_text(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let choice = v.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

fn excerpt(body: &str) -> String {
    body.chars().take(300).collect()
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ReasonRequest<'_>) -> Result<String, ReasonerError> {
        let mut last = None;
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(req.prompt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Status {
                    status,
                    body,
                    retry: false,
                }) => {
                    return Err(ReasonerError::BackendHttp {
                        status,
                        body: excerpt(&body),
                    })
                }
                Err(e) => {
                    if let Attempt::Transport(msg) = &e {
                        tracing::warn!(attempt, "backend request failed: {msg}");
                    }
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(Attempt::Status { status, body, .. }) => ReasonerError::BackendHttp {
                status,
                body: excerpt(&body),
            },
            Some(Attempt::Transport(detail)) => ReasonerError::BackendTimeout {
                attempts: self.max_retries + 1,
                detail,
            },
            None => unreachable!("at least one attempt runs"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_chat_and_completion_shapes() {
        assert_eq!(
            completion_text(r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#).as_deref(),
            Some("hi")
        );
        assert_eq!(completion_text(r#"{"choices":[{"text":"yo"}]}"#).as_deref(), Some("yo"));
        assert!(completion_text(r#"{"error":"x"}"#).is_none());
    }
}

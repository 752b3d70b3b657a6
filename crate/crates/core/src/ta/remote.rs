use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use reqwest::blocking::{multipart, Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::{parse_prefixes, ChatMessage, TaBackend, TaHandle, TeachingAssistant};

pub const API_KEY_ENV: &str = "GPTA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_poll_ms")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_finetune_timeout_s")]
    pub finetune_timeout_s: u64,
    #[serde(default = "default_request_timeout_s")]
    pub request_timeout_s: u64,
}

fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_poll_ms() -> u64 {
    10_000
}
fn default_finetune_timeout_s() -> u64 {
    4 * 3600
}
fn default_request_timeout_s() -> u64 {
    120
}

impl RemoteConfig {
    /// Defaults plus the API key from `GPTA_API_KEY`, if set.
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            poll_interval_ms: default_poll_ms(),
            finetune_timeout_s: default_finetune_timeout_s(),
            request_timeout_s: default_request_timeout_s(),
        }
    }

    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// TA backed by an OpenAI-compatible chat-completions and fine-tuning API.
pub struct RemoteTa {
    config: RemoteConfig,
    client: Client,
    handle: TaHandle,
}

enum Failure {
    /// Worth another attempt: connection problems, 5xx, 408, 429.
    Retryable(String),
    /// The service answered but the reply was unusable; retried as well.
    Unusable(String),
    Fatal(Error),
}

impl RemoteTa {
    pub fn new(config: RemoteConfig, handle: TaHandle) -> Result<Self> {
        if handle.model_id().is_none() {
            return Err(Error::validation("RemoteTa needs a remote handle"));
        }
        if config.max_attempts == 0 {
            return Err(Error::validation("max_attempts must be at least 1"));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_s))
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(RemoteTa {
            config,
            client,
            handle,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn model_id(&self) -> &str {
        self.handle.model_id().expect("remote handle")
    }

    fn authorize(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.config.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }

    fn send_once(&self, req: RequestBuilder) -> std::result::Result<Value, Failure> {
        let resp = self
            .authorize(req)
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_server_error()
            || status == StatusCode::TOO_MANY_REQUESTS
            || status == StatusCode::REQUEST_TIMEOUT
        {
            return Err(Failure::Retryable(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(Error::Protocol(format!(
                "HTTP {status}: {body}"
            ))));
        }
        serde_json::from_str(&body)
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("invalid JSON response: {e}"))))
    }

    /// Runs `attempt` up to `max_attempts` times with doubling backoff.
    fn with_retry<T>(
        &self,
        what: &str,
        mut attempt: impl FnMut() -> std::result::Result<T, Failure>,
    ) -> Result<T> {
        let mut last = String::new();
        let mut unusable = false;
        for n in 1..=self.config.max_attempts {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    unusable = false;
                    last = msg;
                }
                Err(Failure::Unusable(msg)) => {
                    unusable = true;
                    last = msg;
                }
            }
            warn!(
                "{what}: attempt {n}/{} failed: {last}",
                self.config.max_attempts
            );
            if n < self.config.max_attempts {
                let delay = self.config.backoff_ms.saturating_mul(1 << (n - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
        }
        if unusable {
            return Err(Error::Protocol(format!(
                "{what}: {last} (after {} attempts)",
                self.config.max_attempts
            )));
        }
        Err(Error::Transport {
            attempts: self.config.max_attempts,
            message: format!("{what}: {last}"),
        })
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.config.url(path);
        self.with_retry(path, || self.send_once(self.client.post(&url).json(body)))
    }

    fn get_json(&self, path: &str) -> Result<Value> {
        let url = self.config.url(path);
        self.with_retry(path, || self.send_once(self.client.get(&url)))
    }

    fn upload(&self, training_file: &[u8]) -> Result<String> {
        let url = self.config.url("files");
        let resp = self.with_retry("files", || {
            let part = multipart::Part::bytes(training_file.to_vec())
                .file_name("dialogue_gradients.jsonl")
                .mime_str("application/jsonl")
                .map_err(|e| Failure::Fatal(Error::Protocol(e.to_string())))?;
            let form = multipart::Form::new()
                .text("purpose", "fine-tune")
                .part("file", part);
            self.send_once(self.client.post(&url).multipart(form))
        })?;
        string_field(&resp, "id", "file upload")
    }

    fn poll_job(&self, job_id: &str) -> Result<String> {
        let deadline = Instant::now() + Duration::from_secs(self.config.finetune_timeout_s);
        let path = format!("fine_tuning/jobs/{job_id}");
        loop {
            let job = self.get_json(&path)?;
            let status = job
                .get("status")
                .and_then(Value::as_str)
                .unwrap_or("unknown");
            debug!("fine-tune job {job_id}: {status}");
            match status {
                "succeeded" => return string_field(&job, "fine_tuned_model", "fine-tune job"),
                "failed" | "cancelled" => {
                    let message = job
                        .pointer("/error/message")
                        .and_then(Value::as_str)
                        .unwrap_or("job ended without a model")
                        .to_owned();
                    return Err(Error::Finetune {
                        status: status.to_owned(),
                        message,
                    });
                }
                _ => {}
            }
            if Instant::now() >= deadline {
                return Err(Error::Finetune {
                    status: "timeout".into(),
                    message: format!(
                        "job {job_id} still {status} after {}s",
                        self.config.finetune_timeout_s
                    ),
                });
            }
            thread::sleep(Duration::from_millis(self.config.poll_interval_ms));
        }
    }
}

fn string_field(v: &Value, field: &str, what: &str) -> Result<String> {
    v.get(field)
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::Protocol(format!("{what} response lacks string field {field:?}")))
}

impl TeachingAssistant for RemoteTa {
    fn handle(&self) -> &TaHandle {
        &self.handle
    }

    fn set_handle(&mut self, handle: TaHandle) {
        assert!(
            handle.model_id().is_some(),
            "RemoteTa needs a remote handle"
        );
        self.handle = handle;
    }

    fn generate(
        &mut self,
        request: &[ChatMessage],
        count: usize,
        temperature: f64,
    ) -> Result<Vec<String>> {
        let body = json!({
            "model": self.model_id(),
            "temperature": temperature,
            "messages": request,
        });
        let url = self.config.url("chat/completions");
        self.with_retry("chat/completions", || {
            let resp = self.send_once(self.client.post(&url).json(&body))?;
            let text = resp
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    Failure::Unusable("response lacks choices[0].message.content".into())
                })?;
            parse_prefixes(text, count).map_err(|e| Failure::Unusable(e.to_string()))
        })
    }

    fn finetune(&mut self, training_file: &[u8]) -> Result<()> {
        if training_file.iter().all(u8::is_ascii_whitespace) {
            return Err(Error::validation("fine-tune file has no examples"));
        }
        crate::dialogue_gradient::parse_jsonl(training_file)?;

        let file_id = self.upload(training_file)?;
        let job = self.post_json(
            "fine_tuning/jobs",
            &json!({ "model": self.model_id(), "training_file": file_id }),
        )?;
        let job_id = string_field(&job, "id", "fine-tune job")?;
        let model = self.poll_job(&job_id)?;
        self.handle = TaHandle {
            backend: TaBackend::Remote { model_id: model },
            generation: self.handle.generation + 1,
        };
        Ok(())
    }
}

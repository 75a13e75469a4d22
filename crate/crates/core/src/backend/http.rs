use std::sync::{Condvar, Mutex};
use std::time::Duration;

use tracing::{debug, warn};

use super::{
    wire, BackendError, BackendKind, CompletionBackend, CompletionRequest, CompletionResponse,
    RequestTag,
};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 16,
        }
    }

    /// Reads the credential from `LLM_API_KEY`.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        self
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Chat-completions client over HTTP(S).
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(config.max_in_flight);
        Self {
            config,
            agent,
            in_flight,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn post_once(&self, body: &str) -> Result<String, String> {
        let _permit = self.in_flight.acquire();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(format!("http status {status}: {}", text.chars().take(200).collect::<String>()))
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Llm
    }

    fn complete(
        &self,
        tag: &RequestTag,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let body = wire::encode_request(request);
        let attempts = self.config.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base * 2u32.saturating_pow(attempt - 1);
                debug!(task = %tag.task, attempt, ?delay, "retrying completion");
                std::thread::sleep(delay);
            }
            match self.post_once(&body) {
                Ok(text) => return wire::parse_response(&text),
                Err(e) => {
                    warn!(task = %tag.task, attempt, error = %e, "completion request failed");
                    last_error = e;
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "{} after {attempts} attempts: {last_error}",
            self.config.endpoint
        )))
    }
}

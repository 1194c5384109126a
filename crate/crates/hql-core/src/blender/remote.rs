//! Remote chat-completions client: JSON over HTTP with bearer auth,
//! bounded concurrency, and one retry on rate-limit/server/timeout failures.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::BlenderError;

use super::{Blender, BlenderRequest, BlenderResponse, BlenderUsage};

/// Connection settings for a remote backend.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Endpoint root; the client appends `/chat/completions`.
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl RemoteConfig {
    /// Reads HQL_BASE_URL, HQL_API_KEY, and HQL_MODEL.
    pub fn from_env() -> Result<Self, BlenderError> {
        let var = |name: &str| {
            std::env::var(name)
                .map_err(|_| BlenderError::Request(format!("{name} is not set")))
        };
        Ok(RemoteConfig {
            base_url: var("HQL_BASE_URL")?,
            api_key: var("HQL_API_KEY")?,
            model: var("HQL_MODEL")?,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
        })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logit_bias: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: String,
}

/// Extracts the first choice's message text from a chat-completions body.
pub fn parse_chat_completion(body: &str) -> Result<String, BlenderError> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| BlenderError::Payload(format!("unexpected response shape: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BlenderError::Payload("response has no choices".to_string()))
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Gate {
    fn new(slots: usize) -> Self {
        Gate { free: Mutex::new(slots.max(1)), cond: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.free.lock().unwrap() += 1;
        self.gate.cond.notify_one();
    }
}

/// HTTP client for a chat-completions endpoint.
pub struct RemoteBlender {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteBlender {
    pub fn new(config: RemoteConfig) -> Result<Self, BlenderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BlenderError::Request(format!("cannot build HTTP client: {e}")))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(RemoteBlender { config, client, gate })
    }

    pub fn from_env() -> Result<Self, BlenderError> {
        RemoteBlender::new(RemoteConfig::from_env()?)
    }

    fn send_once(&self, req: &BlenderRequest) -> Result<String, BlenderError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage { role: "system", content: &req.system_prompt },
                WireMessage { role: "user", content: &req.user_prompt },
            ],
            temperature: req.temperature,
            logit_bias: None,
        };
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BlenderError::Timeout(self.config.timeout)
                } else {
                    BlenderError::Request(e.to_string())
                }
            })?;

        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BlenderError::Request(format!("cannot read response body: {e}")))?;
        if status.as_u16() == 429 {
            return Err(BlenderError::RateLimited(text));
        }
        if !status.is_success() {
            return Err(BlenderError::Request(format!("HTTP {status}: {text}")));
        }
        parse_chat_completion(&text)
    }
}

impl Blender for RemoteBlender {
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        let _slot = self.gate.acquire();
        let first = self.send_once(req);
        let text = match first {
            Ok(text) => text,
            // Transient failures get one retry; payload errors do not.
            Err(BlenderError::RateLimited(_))
            | Err(BlenderError::Timeout(_))
            | Err(BlenderError::Request(_)) => {
                std::thread::sleep(Duration::from_millis(250));
                self.send_once(req)?
            }
            Err(other) => return Err(other),
        };
        let usage = BlenderUsage { prompt_chars: req.prompt_chars(), output_chars: text.len() };
        Ok(BlenderResponse { text, usage, constrained: false })
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Recorded chat-completions body (identifiers scrubbed).
    const CASSETTE: &str = r#"{
  "id": "chatcmpl-recorded",
  "object": "chat.completion",
  "created": 1700000000,
  "model": "test-model",
  "choices": [
    {
      "index": 0,
      "message": {
        "role": "assistant",
        "content": "2019-20"
      },
      "finish_reason": "stop"
    }
  ],
  "usage": {
    "prompt_tokens": 42,
    "completion_tokens": 5,
    "total_tokens": 47
  }
}"#;

    #[test]
    fn cassette_parses_to_message_text() {
        assert_eq!(parse_chat_completion(CASSETTE).unwrap(), "2019-20");
    }

    #[test]
    fn malformed_body_is_payload_error() {
        assert!(matches!(
            parse_chat_completion("{\"choices\": []}"),
            Err(BlenderError::Payload(_))
        ));
        assert!(matches!(parse_chat_completion("not json"), Err(BlenderError::Payload(_))));
    }

    /// One-shot HTTP server returning `body`; captures the request text.
    fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                        .and_then(|v| v.parse::<usize>().ok())
                        .unwrap_or(0);
                    if buf.len() >= head_end + 4 + content_length {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(reply.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).into_owned()
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn round_trip_against_local_server() {
        let (base_url, server) = serve_once(CASSETTE);
        let blender = RemoteBlender::new(RemoteConfig {
            base_url,
            api_key: "test-key".to_string(),
            model: "test-model".to_string(),
            timeout: Duration::from_secs(5),
            max_in_flight: 2,
        })
        .unwrap();

        let req = BlenderRequest::new("you are a helper", "Which season?");
        let resp = blender.complete(&req).unwrap();
        assert_eq!(resp.text, "2019-20");
        assert_eq!(resp.usage.prompt_chars, req.prompt_chars());

        let request_text = server.join().unwrap();
        assert!(request_text.starts_with("POST /chat/completions"));
        assert!(request_text.contains("authorization: Bearer test-key")
            || request_text.contains("Authorization: Bearer test-key"));
        let body_start = request_text.find("\r\n\r\n").unwrap() + 4;
        let sent: serde_json::Value = serde_json::from_str(&request_text[body_start..]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"], "Which season?");
        assert!(sent.get("logit_bias").is_none());
    }

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Gate::new(2);
        let a = gate.acquire();
        let _b = gate.acquire();
        assert_eq!(*gate.free.lock().unwrap(), 0);
        drop(a);
        assert_eq!(*gate.free.lock().unwrap(), 1);
    }
}

//! HTTP clients for the chat-completion and translation endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AugmentError, AugmentationKind, AugmentationRecord, Augmenter, PromptTemplate};
use crate::data::{build_model_input, Example, Task};

/// Backtranslation pivots: Russian, German, French, Romanian.
pub const DEFAULT_PIVOTS: [&str; 4] = ["ru", "de", "fr", "ro"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

enum CallError {
    Retryable(String),
    Fatal(String),
    BadBody(String),
}

impl RetryPolicy {
    fn run<T>(&self, mut call: impl FnMut() -> Result<T, CallError>) -> Result<T, AugmentError> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(CallError::Retryable(msg)) => {
                    log::debug!("attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                }
                Err(CallError::Fatal(reason)) => {
                    return Err(AugmentError::Unavailable {
                        attempts: attempt,
                        reason,
                    })
                }
                Err(CallError::BadBody(msg)) => return Err(AugmentError::Rejected(msg)),
            }
            if attempt < attempts {
                std::thread::sleep(delay);
                delay = delay.mul_f64(self.multiplier);
            }
        }
        Err(AugmentError::Unavailable { attempts, reason: last })
    }
}

fn post_json(url: &str, api_key: Option<&str>, timeout: Duration, body: &Value) -> Result<Value, CallError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key.filter(|k| !k.is_empty()) {
        request = request.header("Authorization", format!("Bearer {key}"));
    }
    let mut response = match request.send_json(body) {
        Ok(r) => r,
        Err(ureq::Error::BadUri(u)) => return Err(CallError::Fatal(format!("bad URL {u}"))),
        Err(e) => return Err(CallError::Retryable(e.to_string())),
    };
    let status = response.status().as_u16();
    if status == 429 || status >= 500 {
        return Err(CallError::Retryable(format!("HTTP {status}")));
    }
    if !(200..300).contains(&status) {
        let detail = response.body_mut().read_to_string().unwrap_or_default();
        return Err(CallError::Fatal(format!("HTTP {status}: {}", detail.trim())));
    }
    response
        .body_mut()
        .read_json::<Value>()
        .map_err(|e| CallError::BadBody(format!("unreadable response body: {e}")))
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

fn env_slot(name: &str, slot: Option<&str>) -> Option<String> {
    slot.and_then(|s| std::env::var(format!("{name}_{s}")).ok())
        .or_else(|| std::env::var(name).ok())
        .filter(|v| !v.is_empty())
}

/// OpenAI-compatible `POST {base_url}/v1/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl ChatEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ChatEndpoint {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            temperature: 0.7,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads `AUG_LLM_BASE_URL`, `AUG_LLM_API_KEY` and `AUG_LLM_MODEL`, each
    /// preferring the `_A`/`_B` slot suffix when `slot` is given.
    pub fn from_env(slot: Option<&str>) -> Result<Self, AugmentError> {
        let base = env_slot("AUG_LLM_BASE_URL", slot)
            .ok_or_else(|| AugmentError::Config("AUG_LLM_BASE_URL is not set".into()))?;
        let model =
            env_slot("AUG_LLM_MODEL", slot).ok_or_else(|| AugmentError::Config("AUG_LLM_MODEL is not set".into()))?;
        let mut endpoint = ChatEndpoint::new(base, model);
        endpoint.api_key = env_slot("AUG_LLM_API_KEY", slot);
        Ok(endpoint)
    }

    pub fn complete(&self, system: &str, user: &str, max_tokens: u32) -> Result<String, AugmentError> {
        let url = join_url(&self.base_url, "/v1/chat/completions");
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.temperature,
            "max_tokens": max_tokens,
        });
        let reply = self
            .retry
            .run(|| post_json(&url, self.api_key.as_deref(), self.timeout, &body))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| AugmentError::Rejected("completion has no choices[0].message.content".into()))
    }
}

/// Strips whitespace, code fences and one layer of surrounding quotes.
fn clean_completion(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(inner) = s.strip_prefix("```") {
        let inner = inner.strip_suffix("```").unwrap_or(inner);
        // drop an info string such as ```text
        s = match inner.split_once('\n') {
            Some((first, rest)) if !first.contains(' ') => rest,
            _ => inner,
        }
        .trim();
    }
    for (open, close) in [
        ('"', '"'),
        ('\'', '\''),
        ('\u{201c}', '\u{201d}'),
        ('\u{ab}', '\u{bb}'),
        ('`', '`'),
    ] {
        if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            break;
        }
    }
    s.to_string()
}

/// Sends the rendered template for `example` to the chat endpoint and stores
/// the cleaned reply as an LLM record named after the model.
pub fn llm_augment(
    example: &Example,
    endpoint: &ChatEndpoint,
    template: &PromptTemplate,
) -> Result<AugmentationRecord, AugmentError> {
    template.validate()?;
    let text = build_model_input(example)?;
    let raw = endpoint.complete(&template.system, &template.render(&text), template.max_output_tokens)?;
    let cleaned = clean_completion(&raw);
    if cleaned.is_empty() {
        return Err(AugmentError::Rejected(format!("blank completion for {}", example.id)));
    }
    Ok(AugmentationRecord::new(
        &example.id,
        AugmentationKind::Llm,
        &endpoint.model,
        cleaned,
    ))
}

#[derive(Debug, Clone)]
pub struct LlmAugmenter {
    pub endpoint: ChatEndpoint,
    pub template: PromptTemplate,
}

impl Augmenter for LlmAugmenter {
    fn kind(&self) -> AugmentationKind {
        AugmentationKind::Llm
    }

    fn generator(&self) -> String {
        self.endpoint.model.clone()
    }

    fn augment(&self, example: &Example) -> Result<AugmentationRecord, AugmentError> {
        llm_augment(example, &self.endpoint, &self.template)
    }
}

/// `POST {base_url}/translate` with `{text, source, target}`, answering
/// `{text}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Pivot languages this endpoint may be asked for.
    pub pivots: Vec<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl TranslateEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        TranslateEndpoint {
            base_url: base_url.into(),
            api_key: None,
            pivots: DEFAULT_PIVOTS.iter().map(|s| s.to_string()).collect(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads `AUG_MT_BASE_URL` and `AUG_MT_API_KEY`.
    pub fn from_env() -> Result<Self, AugmentError> {
        let base = env_slot("AUG_MT_BASE_URL", None)
            .ok_or_else(|| AugmentError::Config("AUG_MT_BASE_URL is not set".into()))?;
        let mut endpoint = TranslateEndpoint::new(base);
        endpoint.api_key = env_slot("AUG_MT_API_KEY", None);
        Ok(endpoint)
    }

    pub fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, AugmentError> {
        let url = join_url(&self.base_url, "/translate");
        let body = json!({"text": text, "source": source, "target": target});
        let reply = self
            .retry
            .run(|| post_json(&url, self.api_key.as_deref(), self.timeout, &body))?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| AugmentError::Rejected("translation reply has no \"text\" field".into()))
    }

    fn round_trip(&self, text: &str, pivot: &str) -> Result<String, AugmentError> {
        let there = self.translate(text, "en", pivot)?;
        self.translate(&there, pivot, "en")
    }
}

/// English -> `pivot` -> English. Response-task examples translate prompt and
/// response separately so the delimiters survive.
pub fn backtranslate(
    example: &Example,
    pivot: &str,
    endpoint: &TranslateEndpoint,
) -> Result<AugmentationRecord, AugmentError> {
    if !endpoint.pivots.iter().any(|p| p == pivot) {
        return Err(AugmentError::Config(format!(
            "pivot {pivot:?} is not one of the configured languages {:?}",
            endpoint.pivots
        )));
    }
    let text = match example.task {
        Task::Prompt => endpoint.round_trip(&example.prompt, pivot)?,
        Task::Response => {
            let prompt = endpoint.round_trip(&example.prompt, pivot)?;
            let response = endpoint.round_trip(example.response.as_deref().unwrap_or_default(), pivot)?;
            build_model_input(&Example {
                prompt,
                response: Some(response),
                ..example.clone()
            })?
        }
    };
    if text.trim().is_empty() {
        return Err(AugmentError::Rejected(format!("blank translation for {}", example.id)));
    }
    Ok(AugmentationRecord::new(
        &example.id,
        AugmentationKind::Backtranslation,
        &format!("en-{pivot}-en"),
        text,
    ))
}

#[derive(Debug, Clone)]
pub struct BacktranslationAugmenter {
    pub endpoint: TranslateEndpoint,
    pub pivot: String,
}

impl Augmenter for BacktranslationAugmenter {
    fn kind(&self) -> AugmentationKind {
        AugmentationKind::Backtranslation
    }

    fn generator(&self) -> String {
        format!("en-{}-en", self.pivot)
    }

    fn augment(&self, example: &Example) -> Result<AugmentationRecord, AugmentError> {
        backtranslate(example, &self.pivot, &self.endpoint)
    }
}

#[cfg(test)]
pub(crate) mod test_server {
    //! Loopback HTTP/1.1 server answering from a script, for exercising the
    //! wire format without leaving the machine.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    pub struct Recorded {
        pub path: String,
        pub headers: Vec<String>,
        pub body: String,
    }

    pub struct TestServer {
        pub base_url: String,
        pub requests: Arc<Mutex<Vec<Recorded>>>,
    }

    /// `respond` maps (path, body) to (status, response body).
    pub fn spawn<F>(respond: F) -> TestServer
    where
        F: Fn(&str, &str) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = Vec::new();
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    headers.push(line);
                }
                let mut body = vec![0u8; length];
                reader.read_exact(&mut body).unwrap();
                let body = String::from_utf8(body).unwrap();
                let (status, reply) = respond(&path, &body);
                log.lock().unwrap().push(Recorded { path, headers, body });
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        TestServer { base_url, requests }
    }
}

#[cfg(test)]
mod tests {
    use super::test_server::spawn;
    use super::*;

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
            multiplier: 2.0,
        }
    }

    fn chat_reply(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn chat_request_follows_the_wire_format() {
        let server = spawn(|_, _| (200, chat_reply("\"how can I bake a loaf\"")));
        let mut endpoint = ChatEndpoint::new(format!("{}/", server.base_url), "rewriter-3b");
        endpoint.api_key = Some("sekret".into());
        let template = PromptTemplate {
            system: "sys".into(),
            user_pattern: "rewrite: {TEXT}".into(),
            max_output_tokens: 64,
        };
        let example = Example::prompt("p1", "how do I bake bread", None);
        let record = llm_augment(&example, &endpoint, &template).unwrap();
        assert_eq!(record.text, "how can I bake a loaf");
        assert_eq!(record.kind, AugmentationKind::Llm);
        assert_eq!(record.generator, "rewriter-3b");
        assert_eq!(record.example_id, "p1");

        let requests = server.requests.lock().unwrap();
        assert_eq!(requests.len(), 1);
        assert_eq!(requests[0].path, "/v1/chat/completions");
        assert!(requests[0]
            .headers
            .iter()
            .any(|h| h == "authorization: Bearer sekret" || h == "Authorization: Bearer sekret"));
        let body: Value = serde_json::from_str(&requests[0].body).unwrap();
        assert_eq!(body["model"], "rewriter-3b");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["messages"][0], json!({"role": "system", "content": "sys"}));
        assert_eq!(
            body["messages"][1],
            json!({"role": "user", "content": "rewrite: how do I bake bread"})
        );
    }

    #[test]
    fn blank_completion_is_rejected() {
        let server = spawn(|_, _| (200, chat_reply("  \"\"  ")));
        let endpoint = ChatEndpoint::new(server.base_url.clone(), "m");
        let err = llm_augment(
            &Example::prompt("x", "hello there", None),
            &endpoint,
            &PromptTemplate::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AugmentError::Rejected(_)), "{err}");
    }

    #[test]
    fn server_errors_are_retried_three_times() {
        let server = spawn(|_, _| (503, "{}".into()));
        let mut endpoint = ChatEndpoint::new(server.base_url.clone(), "m");
        endpoint.retry = fast_retry();
        let err = llm_augment(
            &Example::prompt("x", "hi you", None),
            &endpoint,
            &PromptTemplate::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AugmentError::Unavailable { attempts: 3, .. }), "{err}");
        assert_eq!(server.requests.lock().unwrap().len(), 3);
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let mut endpoint = ChatEndpoint::new(format!("http://127.0.0.1:{port}"), "m");
        endpoint.retry = fast_retry();
        endpoint.timeout = Duration::from_secs(2);
        let err = llm_augment(
            &Example::prompt("x", "hi you", None),
            &endpoint,
            &PromptTemplate::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AugmentError::Unavailable { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn bad_template_fails_before_any_request() {
        let server = spawn(|_, _| (200, chat_reply("x")));
        let endpoint = ChatEndpoint::new(server.base_url.clone(), "m");
        let template = PromptTemplate {
            user_pattern: "nothing to fill".into(),
            ..PromptTemplate::default()
        };
        let err = llm_augment(&Example::prompt("x", "hi", None), &endpoint, &template).unwrap_err();
        assert!(matches!(err, AugmentError::Config(_)));
        assert!(server.requests.lock().unwrap().is_empty());
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = spawn(|_, _| (401, "{\"error\":\"no\"}".into()));
        let mut endpoint = ChatEndpoint::new(server.base_url.clone(), "m");
        endpoint.retry = fast_retry();
        let err = llm_augment(&Example::prompt("x", "hi", None), &endpoint, &PromptTemplate::default()).unwrap_err();
        assert!(matches!(err, AugmentError::Unavailable { attempts: 1, .. }), "{err}");
    }

    fn echo_translator() -> super::test_server::TestServer {
        spawn(|path, body| {
            assert_eq!(path, "/translate");
            let req: Value = serde_json::from_str(body).unwrap();
            let text = format!("{}>{}", req["text"].as_str().unwrap(), req["target"].as_str().unwrap());
            (200, json!({ "text": text }).to_string())
        })
    }

    #[test]
    fn backtranslation_makes_two_calls_per_text() {
        let server = echo_translator();
        let endpoint = TranslateEndpoint::new(server.base_url.clone());
        let record = backtranslate(&Example::prompt("b1", "hello", None), "de", &endpoint).unwrap();
        assert_eq!(record.text, "hello>de>en");
        assert_eq!(record.generator, "en-de-en");
        assert_eq!(record.kind, AugmentationKind::Backtranslation);
        let requests = server.requests.lock().unwrap();
        let bodies: Vec<Value> = requests
            .iter()
            .map(|r| serde_json::from_str(&r.body).unwrap())
            .collect();
        assert_eq!(bodies[0], json!({"text": "hello", "source": "en", "target": "de"}));
        assert_eq!(bodies[1], json!({"text": "hello>de", "source": "de", "target": "en"}));
    }

    #[test]
    fn four_pivots_give_four_generators() {
        let server = echo_translator();
        let endpoint = TranslateEndpoint::new(server.base_url.clone());
        let example = Example::prompt("b2", "hello", None);
        let generators: std::collections::BTreeSet<String> = DEFAULT_PIVOTS
            .iter()
            .map(|p| backtranslate(&example, p, &endpoint).unwrap().generator)
            .collect();
        assert_eq!(generators.len(), 4);
        assert!(generators.contains("en-ru-en") && generators.contains("en-ro-en"));
    }

    #[test]
    fn unknown_pivot_is_a_config_error() {
        let endpoint = TranslateEndpoint::new("http://127.0.0.1:1");
        let err = backtranslate(&Example::prompt("b", "hello", None), "ja", &endpoint).unwrap_err();
        assert!(matches!(err, AugmentError::Config(_)));
    }

    #[test]
    fn identical_round_trip_is_still_a_record() {
        let server = spawn(|_, body| {
            let req: Value = serde_json::from_str(body).unwrap();
            (200, json!({ "text": req["text"] }).to_string())
        });
        let endpoint = TranslateEndpoint::new(server.base_url.clone());
        let record = backtranslate(&Example::prompt("b", "unchanged text", None), "fr", &endpoint).unwrap();
        assert_eq!(record.text, "unchanged text");
    }

    #[test]
    fn completion_cleanup() {
        assert_eq!(clean_completion("  \"quoted\" "), "quoted");
        assert_eq!(clean_completion("```text\nfenced body\n```"), "fenced body");
        assert_eq!(clean_completion("\u{201c}curly\u{201d}"), "curly");
        assert_eq!(clean_completion("plain \"inner\" quotes"), "plain \"inner\" quotes");
        assert_eq!(clean_completion("\""), "\"");
    }
}

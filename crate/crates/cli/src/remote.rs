//! HTTP clients for chat-completion generation and remote embeddings.
//!
//! Both speak the common JSON-over-HTTP shape: chat completions take a
//! `messages` list and return `choices[0].message.content`; embeddings take
//! a list of strings under `input` and return one vector per string under
//! `data[i].embedding`. Requests carry a bearer token when a key is
//! configured and are retried with linear backoff on transport errors,
//! 429, and 5xx responses.

use std::sync::OnceLock;
use std::time::Duration;

use augcap_core::augment::{AugmentError, GeneratedText, PromptGenerator, Provenance, RejectReason};
use augcap_core::embed::{EmbedError, Embedder, EmbeddingVector};
use augcap_core::policy::{PolicyKind, TemplateSet};
use serde::Deserialize;

/// Connection settings shared by both endpoint clients.
#[derive(Debug, Clone)]
pub struct EndpointOptions {
    pub url: String,
    pub model: String,
    /// Bearer token; requests go out unauthenticated when absent.
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Sleep before retry `k` is `backoff * k`.
    pub backoff: Duration,
}

impl EndpointOptions {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointOptions {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

/// Remote call failures.
#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("cannot build HTTP client: {0}")]
    Client(String),
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url}: HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("{url}: unusable response: {message}")]
    Malformed { url: String, message: String },
    #[error("{url}: giving up after {attempts} attempts: {last}")]
    Exhausted { url: String, attempts: u32, last: String },
}

enum Failure {
    Retryable(String),
    Fatal(RemoteError),
}

struct HttpClient {
    client: reqwest::blocking::Client,
    options: EndpointOptions,
}

impl HttpClient {
    fn new(options: EndpointOptions) -> Result<Self, RemoteError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| RemoteError::Client(e.to_string()))?;
        Ok(HttpClient { client, options })
    }

    /// Posts `body`, parsing the JSON response. Transport errors, 429, and
    /// 5xx are retried `options.retries` times with linear backoff; other
    /// failures return immediately.
    fn post_json<T: serde::de::DeserializeOwned>(&self, body: &serde_json::Value) -> Result<T, RemoteError> {
        let url = &self.options.url;
        let attempts = self.options.retries + 1;
        let mut last_failure = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.options.backoff * (attempt - 1));
                log::debug!("retrying {url} (attempt {attempt} of {attempts})");
            }
            match self.post_once(body) {
                Ok(parsed) => return Ok(parsed),
                Err(Failure::Fatal(err)) => return Err(err),
                Err(Failure::Retryable(message)) => {
                    log::warn!("{url}: {message}");
                    last_failure = message;
                }
            }
        }
        Err(RemoteError::Exhausted { url: url.clone(), attempts, last: last_failure })
    }

    fn post_once<T: serde::de::DeserializeOwned>(&self, body: &serde_json::Value) -> Result<T, Failure> {
        let url = &self.options.url;
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.options.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Failure::Retryable(format!("transport error: {e}")))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retryable(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(Failure::Fatal(RemoteError::Status {
                url: url.clone(),
                status: status.as_u16(),
                body: truncate(&body),
            }));
        }
        let text = response
            .text()
            .map_err(|e| Failure::Retryable(format!("cannot read response body: {e}")))?;
        serde_json::from_str(&text).map_err(|e| {
            Failure::Fatal(RemoteError::Malformed { url: url.clone(), message: e.to_string() })
        })
    }
}

fn truncate(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.chars().count() <= LIMIT {
        body.to_string()
    } else {
        let head: String = body.chars().take(LIMIT).collect();
        format!("{head}...")
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// A chat-completion endpoint.
pub struct ChatEndpoint {
    http: HttpClient,
    temperature: f64,
}

impl ChatEndpoint {
    pub fn new(options: EndpointOptions, temperature: f64) -> Result<Self, RemoteError> {
        Ok(ChatEndpoint { http: HttpClient::new(options)?, temperature })
    }

    /// Sends one user message and returns the first choice's content,
    /// trimmed.
    pub fn complete(&self, content: &str) -> Result<String, RemoteError> {
        let body = serde_json::json!({
            "model": self.http.options.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": content}],
        });
        let response: ChatResponse = self.http.post_json(&body)?;
        let first = response.choices.into_iter().next().ok_or_else(|| RemoteError::Malformed {
            url: self.http.options.url.clone(),
            message: "response has no choices".to_string(),
        })?;
        Ok(first.message.content.trim().to_string())
    }
}

/// Prompt generator backed by a chat-completion endpoint.
///
/// Each policy's instruction template is rendered with the prompt and sent
/// as a single user message. Empty completions and completions that echo
/// the instruction reject the item (the pool shrinks); transport failures
/// that survive the retry budget abort the build.
pub struct ChatCompletionGenerator {
    endpoint: ChatEndpoint,
    templates: TemplateSet,
}

impl ChatCompletionGenerator {
    pub fn new(endpoint: ChatEndpoint, templates: TemplateSet) -> Self {
        ChatCompletionGenerator { endpoint, templates }
    }
}

impl PromptGenerator for ChatCompletionGenerator {
    fn id(&self) -> &str {
        "chat-completion"
    }

    fn provenance(&self) -> Provenance {
        Provenance::Remote
    }

    /// The per-item seed is ignored: a remote model's sampling is driven by
    /// the endpoint's temperature, not by this process.
    fn generate(&self, policy: PolicyKind, prompt: &str, _seed: u64) -> Result<GeneratedText, AugmentError> {
        let instruction = self.templates.get(policy).render(prompt)?;
        let completion = self
            .endpoint
            .complete(&instruction)
            .map_err(|e| AugmentError::Generation { policy, message: e.to_string() })?;
        if completion.is_empty() {
            return Err(AugmentError::ItemRejected { policy, reason: RejectReason::EmptyCompletion });
        }
        if completion == instruction.trim() {
            return Err(AugmentError::ItemRejected { policy, reason: RejectReason::EchoedInstruction });
        }
        let changed = completion != prompt;
        Ok(GeneratedText { text: completion, changed })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

/// Sentence embedder backed by a remote embedding endpoint.
///
/// Vectors are normalized to unit length on receipt. The dimension is
/// learned from the first response and later responses must match it.
pub struct RemoteEmbedder {
    http: HttpClient,
    dimension: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(options: EndpointOptions) -> Result<Self, RemoteError> {
        Ok(RemoteEmbedder { http: HttpClient::new(options)?, dimension: OnceLock::new() })
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        "remote"
    }

    /// Zero until the first successful call has revealed the endpoint's
    /// dimension.
    fn dimension(&self) -> usize {
        self.dimension.get().copied().unwrap_or(0)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut vectors = self.embed_batch(&[text])?;
        Ok(vectors.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::json!({
            "model": self.http.options.model,
            "input": texts,
        });
        let response: EmbeddingResponse =
            self.http.post_json(&body).map_err(|e| EmbedError::Backend(e.to_string()))?;
        if response.data.len() != texts.len() {
            return Err(EmbedError::Backend(format!(
                "endpoint returned {} embeddings for {} inputs",
                response.data.len(),
                texts.len()
            )));
        }
        let mut vectors = Vec::with_capacity(response.data.len());
        for row in response.data {
            let vector = EmbeddingVector::from_raw(row.embedding)?;
            let expected = *self.dimension.get_or_init(|| vector.dimension());
            if vector.dimension() != expected {
                return Err(EmbedError::DimensionMismatch { left: expected, right: vector.dimension() });
            }
            vectors.push(vector);
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Single-threaded test server answering a fixed script of responses,
    /// one per connection, recording each request body.
    fn spawn_server(script: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<serde_json::Value>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in script {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                let mut authorization = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(rest) = lower.strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap();
                    }
                    if let Some(rest) = line.strip_prefix("Authorization:").or(line.strip_prefix("authorization:")) {
                        authorization = Some(rest.trim().to_string());
                    }
                }
                let mut raw = vec![0u8; content_length];
                reader.read_exact(&mut raw).unwrap();
                let mut parsed: serde_json::Value = serde_json::from_slice(&raw).unwrap();
                if let Some(auth) = authorization {
                    parsed["test_authorization"] = serde_json::Value::String(auth);
                }
                bodies.push(parsed);
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len(),
                );
                let mut stream = reader.into_inner();
                stream.write_all(response.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn fast_options(url: &str) -> EndpointOptions {
        EndpointOptions {
            retries: 2,
            backoff: Duration::ZERO,
            timeout: Duration::from_secs(5),
            ..EndpointOptions::new(url, "test-model")
        }
    }

    fn chat_body(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn completion_sends_the_expected_body_and_trims_the_reply() {
        let (url, server) = spawn_server(vec![(200, chat_body("  A rewritten prompt?  "))]);
        let mut options = fast_options(&url);
        options.api_key = Some("secret-key".to_string());
        let endpoint = ChatEndpoint::new(options, 1.0).unwrap();
        let reply = endpoint.complete("Rewrite this.").unwrap();
        assert_eq!(reply, "A rewritten prompt?");
        let bodies = server.join().unwrap();
        assert_eq!(bodies[0]["model"], "test-model");
        assert_eq!(bodies[0]["temperature"], 1.0);
        assert_eq!(bodies[0]["messages"][0]["role"], "user");
        assert_eq!(bodies[0]["messages"][0]["content"], "Rewrite this.");
        assert_eq!(bodies[0]["test_authorization"], "Bearer secret-key");
    }

    #[test]
    fn no_key_means_no_authorization_header() {
        let (url, server) = spawn_server(vec![(200, chat_body("ok"))]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 0.5).unwrap();
        endpoint.complete("hi").unwrap();
        let bodies = server.join().unwrap();
        assert!(bodies[0].get("test_authorization").is_none());
    }

    #[test]
    fn server_errors_are_retried_until_success() {
        let (url, server) = spawn_server(vec![
            (500, "{}".to_string()),
            (429, "{}".to_string()),
            (200, chat_body("recovered")),
        ]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        assert_eq!(endpoint.complete("hi").unwrap(), "recovered");
        assert_eq!(server.join().unwrap().len(), 3);
    }

    #[test]
    fn exhausted_retries_report_the_attempt_count() {
        let (url, server) = spawn_server(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        let err = endpoint.complete("hi").unwrap_err();
        match err {
            RemoteError::Exhausted { attempts, ref last, .. } => {
                assert_eq!(attempts, 3);
                assert!(last.contains("500"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn client_errors_fail_without_retry() {
        let (url, server) = spawn_server(vec![(401, "{\"error\":\"bad key\"}".to_string())]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        let err = endpoint.complete("hi").unwrap_err();
        match err {
            RemoteError::Status { status, ref body, .. } => {
                assert_eq!(status, 401);
                assert!(body.contains("bad key"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn generator_renders_the_policy_template() {
        let (url, server) = spawn_server(vec![(200, chat_body("Is there seriously a dog?"))]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        let generator = ChatCompletionGenerator::new(endpoint, TemplateSet::default());
        let out = generator.generate(PolicyKind::Hard, "Is there a dog?", 7).unwrap();
        assert_eq!(out.text, "Is there seriously a dog?");
        assert!(out.changed);
        let bodies = server.join().unwrap();
        let sent = bodies[0]["messages"][0]["content"].as_str().unwrap();
        assert!(sent.contains("Is there a dog?"));
        assert_ne!(sent, "Is there a dog?");
    }

    #[test]
    fn empty_and_echoed_completions_reject_the_item() {
        let instruction = TemplateSet::default().get(PolicyKind::Easy).render("Is there a cat?").unwrap();
        let (url, server) = spawn_server(vec![(200, chat_body("   ")), (200, chat_body(&instruction))]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        let generator = ChatCompletionGenerator::new(endpoint, TemplateSet::default());
        let empty = generator.generate(PolicyKind::Easy, "Is there a cat?", 1).unwrap_err();
        assert!(matches!(
            empty,
            AugmentError::ItemRejected { reason: RejectReason::EmptyCompletion, .. }
        ));
        let echoed = generator.generate(PolicyKind::Easy, "Is there a cat?", 2).unwrap_err();
        assert!(matches!(
            echoed,
            AugmentError::ItemRejected { reason: RejectReason::EchoedInstruction, .. }
        ));
        server.join().unwrap();
    }

    #[test]
    fn generation_failure_names_the_policy() {
        let (url, server) = spawn_server(vec![(404, "{}".to_string())]);
        let endpoint = ChatEndpoint::new(fast_options(&url), 1.0).unwrap();
        let generator = ChatCompletionGenerator::new(endpoint, TemplateSet::default());
        let err = generator.generate(PolicyKind::Long, "Is there a cat?", 1).unwrap_err();
        match err {
            AugmentError::Generation { policy, ref message } => {
                assert_eq!(policy, PolicyKind::Long);
                assert!(message.contains("404"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        server.join().unwrap();
    }

    fn embedding_body(vectors: &[Vec<f64>]) -> String {
        let data: Vec<serde_json::Value> = vectors
            .iter()
            .map(|v| serde_json::json!({"object": "embedding", "embedding": v}))
            .collect();
        serde_json::json!({"data": data}).to_string()
    }

    #[test]
    fn embeddings_are_normalized_and_batched() {
        let (url, server) = spawn_server(vec![(200, embedding_body(&[vec![3.0, 0.0, 4.0], vec![0.0, 2.0, 0.0]]))]);
        let embedder = RemoteEmbedder::new(fast_options(&url)).unwrap();
        let vectors = embedder.embed_batch(&["a", "b"]).unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].values(), &[0.6, 0.0, 0.8]);
        assert_eq!(vectors[1].values(), &[0.0, 1.0, 0.0]);
        assert_eq!(embedder.dimension(), 3);
        let bodies = server.join().unwrap();
        assert_eq!(bodies[0]["model"], "test-model");
        assert_eq!(bodies[0]["input"], serde_json::json!(["a", "b"]));
    }

    #[test]
    fn embedding_count_mismatch_is_an_error() {
        let (url, server) = spawn_server(vec![(200, embedding_body(&[vec![1.0]]))]);
        let embedder = RemoteEmbedder::new(fast_options(&url)).unwrap();
        let err = embedder.embed_batch(&["a", "b"]).unwrap_err();
        assert!(matches!(err, EmbedError::Backend(_)));
        server.join().unwrap();
    }

    #[test]
    fn embedding_dimension_drift_is_an_error() {
        let (url, server) = spawn_server(vec![
            (200, embedding_body(&[vec![1.0, 0.0]])),
            (200, embedding_body(&[vec![1.0, 0.0, 0.0]])),
        ]);
        let embedder = RemoteEmbedder::new(fast_options(&url)).unwrap();
        embedder.embed("a").unwrap();
        let err = embedder.embed("b").unwrap_err();
        assert!(matches!(err, EmbedError::DimensionMismatch { left: 2, right: 3 }));
        server.join().unwrap();
    }

    #[test]
    fn zero_vector_from_the_endpoint_is_an_error() {
        let (url, server) = spawn_server(vec![(200, embedding_body(&[vec![0.0, 0.0]]))]);
        let embedder = RemoteEmbedder::new(fast_options(&url)).unwrap();
        let err = embedder.embed("a").unwrap_err();
        assert!(matches!(err, EmbedError::ZeroNorm));
        server.join().unwrap();
    }
}

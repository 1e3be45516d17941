//! Completion backends: a chat-completions HTTP client, a hash-keyed replay
//! store and a keyword-table mock.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue_model::{DialogueState, StateTriple};
use crate::state_parser::format_state;

/// Environment variable read for the bearer token unless overridden.
pub const DEFAULT_TOKEN_ENV: &str = "STATELINK_API_TOKEN";

/// Completion emitted by the mock when no keyword matches.
pub const EMPTY_COMPLETION: &str = "Domain : [] , Slot : [] , Value : []";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no replay entry for prompt hash {hash}")]
    ReplayMiss { hash: String },
    #[error("{path}:{line}: {detail}")]
    Fixture {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Failures caused by the remote side rather than by local input.
    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            Self::Timeout { .. }
                | Self::RateLimited { .. }
                | Self::Malformed(_)
                | Self::Http { .. }
                | Self::Transport(_)
                | Self::ReplayMiss { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
            model_name: "llama3-8b-instruct".into(),
            timeout_ms: 60_000,
            retries: 3,
        }
    }
}

impl GenerationParams {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Greedy decoding with a pinned model name.
    pub fn is_reproducible(&self) -> bool {
        self.temperature == 0.0 && !self.model_name.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    Replay,
    RuleMock,
}

#[derive(Debug)]
pub enum Backend {
    Http(HttpBackend),
    Replay(ReplayStore),
    RuleMock(RuleMock),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Self::Http(_) => BackendKind::Http,
            Self::Replay(_) => BackendKind::Replay,
            Self::RuleMock(_) => BackendKind::RuleMock,
        }
    }

    pub fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        match self {
            Self::Http(h) => h.complete(prompt, params),
            Self::Replay(r) => r.lookup(prompt),
            Self::RuleMock(m) => Ok(m.complete(prompt)),
        }
    }
}

pub fn complete(backend: &Backend, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
    backend.complete(prompt, params)
}

/// Hex SHA-256 of the prompt bytes.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

// ---------------------------------------------------------------- replay

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    pub completion: String,
}

/// Completions keyed by prompt hash. Backed by an append-only JSONL file in
/// which later records override earlier ones.
#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    entries: HashMap<String, String>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path`, which need not exist yet.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: ReplayRecord = serde_json::from_str(line).map_err(|e| BackendError::Fixture {
                    path: path.to_owned(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
                entries.insert(r.prompt_hash, r.completion);
            }
        }
        Ok(Self { path: Some(path.to_owned()), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, prompt: &str) -> Result<String, BackendError> {
        let hash = prompt_hash(prompt);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or(BackendError::ReplayMiss { hash })
    }

    pub fn store(&mut self, prompt: &str, completion: &str) -> Result<(), BackendError> {
        let record = ReplayRecord {
            prompt_hash: prompt_hash(prompt),
            completion: completion.to_owned(),
        };
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        self.entries.insert(record.prompt_hash, record.completion);
        Ok(())
    }
}

/// `replay_store` as a free function.
pub fn replay_store(store: &mut ReplayStore, prompt: &str, completion: &str) -> Result<(), BackendError> {
    store.store(prompt, completion)
}

// ---------------------------------------------------------------- mock

#[derive(Debug, Clone)]
struct Keyword {
    pattern: Regex,
    triple: StateTriple,
}

/// Deterministic stand-in for a model: whole-word keyword matches in the
/// prompt's input section become `Domain : [..] , Slot : [..] , Value : [..]` lines.
#[derive(Debug, Clone)]
pub struct RuleMock {
    keywords: Vec<Keyword>,
}

impl RuleMock {
    /// Tab-separated `keyword  domain  slot  value` lines; `#` starts a comment.
    pub fn parse_table(text: &str) -> Result<Self, String> {
        let mut keywords = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [kw, d, s, v] = cols[..] else {
                return Err(format!("line {}: expected 4 tab-separated columns", i + 1));
            };
            if kw.is_empty() {
                return Err(format!("line {}: empty keyword", i + 1));
            }
            let triple = StateTriple::new(d, s, v).map_err(|e| format!("line {}: {e}", i + 1))?;
            let words: Vec<String> = kw.split_whitespace().map(regex::escape).collect();
            let pattern = Regex::new(&format!(r"(?i)\b{}\b", words.join(r"\s+"))).expect("escaped keyword");
            keywords.push(Keyword { pattern, triple });
        }
        Ok(Self { keywords })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)?;
        Self::parse_table(&text).map_err(|detail| BackendError::Fixture {
            path: path.to_owned(),
            line: 0,
            detail,
        })
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// State implied by keyword mentions in `text`; a later mention wins
    /// over an earlier one for the same domain and slot.
    pub fn extract(&self, text: &str) -> DialogueState {
        let mut hits: Vec<(usize, usize, &StateTriple)> = Vec::new();
        for (k, kw) in self.keywords.iter().enumerate() {
            for m in kw.pattern.find_iter(text) {
                hits.push((m.start(), k, &kw.triple));
            }
        }
        hits.sort_by_key(|&(pos, k, _)| (pos, k));
        DialogueState::from_triples(hits.into_iter().map(|(_, _, t)| t.clone()))
    }

    pub fn complete(&self, prompt: &str) -> String {
        let state = self.extract(input_section(prompt));
        if state.is_empty() {
            EMPTY_COMPLETION.to_owned()
        } else {
            format_state(&state)
        }
    }
}

/// Text between the last `Input:` marker and the `Response:` after it, so
/// instructions and exemplars are never mined. The whole prompt if there is
/// no marker.
pub fn input_section(prompt: &str) -> &str {
    match prompt.rfind("Input:") {
        Some(i) => {
            let rest = &prompt[i + "Input:".len()..];
            match rest.find("Response:") {
                Some(j) => &rest[..j],
                None => rest,
            }
        }
        None => prompt,
    }
}

// ---------------------------------------------------------------- http

#[derive(Debug, Default)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

impl Gate {
    fn acquire(&self, limit: usize) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

/// Client for an OpenAI-style `POST {base_url}/chat/completions` endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    token_env: String,
    max_in_flight: usize,
    backoff: Duration,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            token_env: DEFAULT_TOKEN_ENV.to_owned(),
            max_in_flight: 4,
            backoff: Duration::from_millis(500),
            client,
            gate: Gate::default(),
        })
    }

    /// Name of the environment variable holding the bearer token.
    pub fn with_token_env(mut self, var: &str) -> Self {
        self.token_env = var.to_owned();
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// First retry delay; it doubles on each further retry.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    pub fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let _permit = self.gate.acquire(self.max_in_flight);
        let body = json!({
            "model": params.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let token = std::env::var(&self.token_env).ok().filter(|t| !t.is_empty());

        let mut last = None;
        for attempt in 0..=params.retries {
            if attempt > 0 {
                let delay = self.backoff * 2u32.saturating_pow(attempt - 1);
                log::debug!("retrying in {delay:?} after {:?}", last);
                thread::sleep(delay);
            }
            match self.attempt(&body, token.as_deref(), params.timeout()) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => last = Some(e),
            }
        }
        let attempts = params.retries + 1;
        Err(match last.expect("at least one attempt") {
            BackendError::Timeout { .. } => BackendError::Timeout { attempts },
            BackendError::RateLimited { .. } => BackendError::RateLimited { attempts },
            e => e,
        })
    }

    fn attempt(&self, body: &Value, token: Option<&str>, timeout: Duration) -> Result<String, Attempt> {
        let mut req = self.client.post(self.endpoint()).json(body).timeout(timeout);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(Attempt::Retry(BackendError::Timeout { attempts: 1 })),
            Err(e) => return Err(Attempt::Retry(BackendError::Transport(e.to_string()))),
        };
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(Attempt::Retry(BackendError::RateLimited { attempts: 1 }));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Err(Attempt::Retry(BackendError::Timeout { attempts: 1 })),
            Err(e) => return Err(Attempt::Retry(BackendError::Transport(e.to_string()))),
        };
        if !status.is_success() {
            let err = BackendError::Http { status: status.as_u16(), body: text };
            return Err(if status.is_server_error() { Attempt::Retry(err) } else { Attempt::Fail(err) });
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fail(BackendError::Malformed(format!("invalid JSON: {e}"))))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Attempt::Fail(BackendError::Malformed("missing choices[0].message.content".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_parser::parse_state;

    const TABLE: &str = "# keyword\tdomain\tslot\tvalue\nasian\trestaurant\tfood\tasian\neast\thotel\tarea\teast\nwest\thotel\tarea\twest\nfree parking\thotel\tparking\tyes\n";

    #[test]
    fn replay_lookup_and_miss() {
        let mut store = ReplayStore::in_memory();
        let backend_params = GenerationParams::default();
        store.store("p", "Domain : ['hotel'] , Slot : ['area'] , Value : ['east']").unwrap();
        let backend = Backend::Replay(store);
        assert_eq!(
            backend.complete("p", &backend_params).unwrap(),
            "Domain : ['hotel'] , Slot : ['area'] , Value : ['east']"
        );
        assert!(matches!(backend.complete("q", &backend_params), Err(BackendError::ReplayMiss { .. })));
        assert!(matches!(backend.complete("  ", &backend_params), Err(BackendError::EmptyPrompt)));
    }

    #[test]
    fn replay_file_overwrite_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let mut store = ReplayStore::open(&path).unwrap();
        store.store("p", "first").unwrap();
        store.store("p", "second").unwrap();
        store.store("e", "").unwrap();
        let reopened = ReplayStore::open(&path).unwrap();
        assert_eq!(reopened.lookup("p").unwrap(), "second");
        assert_eq!(reopened.lookup("e").unwrap(), "");
        assert_eq!(reopened.len(), 2);
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn mock_reads_only_the_input_section() {
        let mock = RuleMock::parse_table(TABLE).unwrap();
        let prompt = "Example 1: Input: somewhere west Response: x Instruction: track Input: USER: an Asian restaurant please Response:";
        let out = mock.complete(prompt);
        assert_eq!(out, "Domain : ['restaurant'] , Slot : ['food'] , Value : ['asian']");
        let parsed = parse_state(&out);
        assert_eq!(parsed.triples(), vec![StateTriple::new("restaurant", "food", "asian").unwrap()]);
    }

    #[test]
    fn mock_whole_words_and_latest_mention() {
        let mock = RuleMock::parse_table(TABLE).unwrap();
        assert!(mock.extract("northeastern caucasian").is_empty());
        let s = mock.extract("east side, no wait, WEST, with free\n parking");
        assert_eq!(s.get("hotel", "area"), Some("west"));
        assert_eq!(s.get("hotel", "parking"), Some("yes"));
        let none = mock.complete("Input: hello Response:");
        assert_eq!(none, EMPTY_COMPLETION);
        let parsed = parse_state(&none);
        assert!(parsed.state.is_empty() && !parsed.is_failure());
    }

    #[test]
    fn bad_tables() {
        assert!(RuleMock::parse_table("asian\trestaurant\tfood").is_err());
        assert!(RuleMock::parse_table("\trestaurant\tfood\tasian").is_err());
    }

    #[test]
    fn reproducibility_flag() {
        let mut p = GenerationParams::default();
        assert!(p.is_reproducible());
        p.temperature = 0.7;
        assert!(!p.is_reproducible());
    }
}

//! Run configuration: defaults, then a `key = value` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use statelink::dataset_io::CorpusFormat;
use statelink::llm_backend::{GenerationParams, DEFAULT_TOKEN_ENV};
use statelink::metrics::StateMode;
use statelink::prompt_engine::PromptStrategy;
use statelink::vgae::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    RuleMock,
    Replay,
    Http,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rule-mock" | "mock" => Ok(Self::RuleMock),
            "replay" => Ok(Self::Replay),
            "http" => Ok(Self::Http),
            _ => Err("expected rule-mock, replay or http".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSource {
    Predictions,
    Gold,
}

impl FromStr for GraphSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "predictions" => Ok(Self::Predictions),
            "gold" => Ok(Self::Gold),
            _ => Err("expected predictions or gold".into()),
        }
    }
}

/// Fully resolved settings of one run; echoed into every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API token.
    pub token_env: String,
    pub keywords: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub record_replay: Option<PathBuf>,
    pub max_in_flight: usize,
    pub generation: GenerationParams,

    pub strategy: PromptStrategy,
    pub anti_hallucination: bool,
    pub exemplars: Option<PathBuf>,
    pub shots: Option<usize>,
    pub templates: Option<PathBuf>,

    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub predictions: Option<PathBuf>,
    pub state_mode: StateMode,
    pub graph_source: GraphSource,
    pub graph_dir: Option<PathBuf>,

    pub train: TrainConfig,
    pub split_seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub cv_folds: usize,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub top_k: usize,

    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendChoice::RuleMock,
            endpoint: None,
            token_env: DEFAULT_TOKEN_ENV.into(),
            keywords: None,
            replay: None,
            record_replay: None,
            max_in_flight: 4,
            generation: GenerationParams::default(),
            strategy: PromptStrategy::Cot,
            anti_hallucination: true,
            exemplars: None,
            shots: None,
            templates: None,
            corpus: None,
            format: CorpusFormat::PlainJsonl,
            predictions: None,
            state_mode: StateMode::Cumulative,
            graph_source: GraphSource::Predictions,
            graph_dir: None,
            train: TrainConfig::default(),
            split_seed: 42,
            train_frac: 0.85,
            val_frac: 0.05,
            test_frac: 0.10,
            cv_folds: 0,
            checkpoint: None,
            history: None,
            top_k: 3,
            out: None,
        }
    }
}

/// Every settable key with a one-line description. Flags are the keys with
/// `_` replaced by `-`.
pub const KEYS: &[(&str, &str)] = &[
    ("backend", "completion backend: rule-mock, replay or http"),
    ("endpoint", "base URL of a chat-completions API (http backend)"),
    ("token_env", "environment variable holding the API bearer token"),
    ("keywords", "keyword table for the rule-mock backend (TSV)"),
    ("replay", "replay store for the replay backend (JSONL)"),
    ("record_replay", "append every completion obtained to this replay store"),
    ("max_in_flight", "concurrent HTTP requests"),
    ("model", "model name sent to the backend"),
    ("temperature", "sampling temperature"),
    ("max_tokens", "completion length limit"),
    ("timeout_ms", "per-request timeout in milliseconds"),
    ("retries", "retries on transient backend failures"),
    ("strategy", "prompt strategy: cot, cot-persona-1..3, self-discover, tot"),
    ("anti_hallucination", "add the NONE instruction (true/false)"),
    ("exemplars", "few-shot exemplar file (JSONL)"),
    ("shots", "number of exemplars to use (default: all)"),
    ("templates", "prompt template override file"),
    ("corpus", "dialogue corpus"),
    ("format", "corpus format: jsonl, multiwoz or sgd"),
    ("predictions", "per-turn prediction file"),
    ("state_mode", "compare cumulative states or per-turn deltas"),
    ("graph_source", "build the graph from predictions or gold"),
    ("graph_dir", "directory holding nodes.jsonl and edges.txt"),
    ("hidden_dim", "VGAE hidden width"),
    ("latent_dim", "VGAE latent width"),
    ("learning_rate", "Adam learning rate"),
    ("epochs", "training epochs"),
    ("kl_weight", "weight of the KL term"),
    ("seed", "training seed (initialisation and noise)"),
    ("split_seed", "edge split seed"),
    ("train_frac", "fraction of edges used for training"),
    ("val_frac", "fraction of edges used for validation"),
    ("test_frac", "fraction of edges used for testing"),
    ("cv_folds", "edge-level cross-validation folds (0 = off)"),
    ("checkpoint", "model checkpoint (JSON)"),
    ("history", "per-epoch training history output (JSONL)"),
    ("top_k", "candidates per dialogue"),
    ("out", "main output file of the subcommand"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("{key} = {value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError(format!("{key} = {value}: expected true or false"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "backend" => self.backend = parse(&key, v)?,
            "endpoint" => self.endpoint = (!v.is_empty()).then(|| v.to_owned()),
            "token_env" => self.token_env = v.to_owned(),
            "token" | "api_token" | "api_key" => {
                return Err(ConfigError(format!(
                    "`{key}` is not accepted; put the token in the environment variable named by token_env"
                )))
            }
            "keywords" => self.keywords = opt_path(v),
            "replay" => self.replay = opt_path(v),
            "record_replay" => self.record_replay = opt_path(v),
            "max_in_flight" => self.max_in_flight = parse(&key, v)?,
            "model" => self.generation.model_name = v.to_owned(),
            "temperature" => self.generation.temperature = parse(&key, v)?,
            "max_tokens" => self.generation.max_tokens = parse(&key, v)?,
            "timeout_ms" => self.generation.timeout_ms = parse(&key, v)?,
            "retries" => self.generation.retries = parse(&key, v)?,
            "strategy" => self.strategy = parse(&key, v)?,
            "anti_hallucination" => self.anti_hallucination = parse_bool(&key, v)?,
            "exemplars" => self.exemplars = opt_path(v),
            "shots" => self.shots = Some(parse(&key, v)?),
            "templates" => self.templates = opt_path(v),
            "corpus" => self.corpus = opt_path(v),
            "format" => self.format = parse(&key, v)?,
            "predictions" => self.predictions = opt_path(v),
            "state_mode" => {
                self.state_mode = match v {
                    "cumulative" => StateMode::Cumulative,
                    "delta" => StateMode::Delta,
                    _ => return Err(ConfigError(format!("{key} = {v}: expected cumulative or delta"))),
                }
            }
            "graph_source" => self.graph_source = parse(&key, v)?,
            "graph_dir" => self.graph_dir = opt_path(v),
            "hidden_dim" => self.train.hidden_dim = parse(&key, v)?,
            "latent_dim" => self.train.latent_dim = parse(&key, v)?,
            "learning_rate" => self.train.learning_rate = parse(&key, v)?,
            "epochs" => self.train.epochs = parse(&key, v)?,
            "kl_weight" => self.train.kl_weight = parse(&key, v)?,
            "seed" => self.train.seed = parse(&key, v)?,
            "split_seed" => self.split_seed = parse(&key, v)?,
            "train_frac" => self.train_frac = parse(&key, v)?,
            "val_frac" => self.val_frac = parse(&key, v)?,
            "test_frac" => self.test_frac = parse(&key, v)?,
            "cv_folds" => self.cv_folds = parse(&key, v)?,
            "checkpoint" => self.checkpoint = opt_path(v),
            "history" => self.history = opt_path(v),
            "top_k" => self.top_k = parse(&key, v)?,
            "out" => self.out = opt_path(v),
            _ => return Err(ConfigError(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file: one setting per line, `#` comments,
    /// blank lines ignored, optional double quotes around the value.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected `key = value`", i + 1)));
            };
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(v);
            self.set(k, v)
                .map_err(|e| ConfigError(format!("line {}: {}", i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T, ConfigError> {
        value
            .as_ref()
            .ok_or_else(|| ConfigError(format!("missing `{key}` (flag --{})", key.replace('_', "-"))))
    }
}

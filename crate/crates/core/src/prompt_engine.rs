//! Prompt rendering for the extraction step.
//!
//! Every prompt is one string laid out as
//!
//! ```text
//! [persona] frame reasoning-cue [anti-hallucination] [exemplars...] Instruction: .. Input: .. Response:
//! ```
//!
//! The persona sentences, the frame and the chain-of-thought cue are the
//! published template texts and are kept byte-exact. All other texts can be
//! replaced through a template override file (see [`PromptTemplates::parse`]).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PERSONA_1: &str = "You are an advanced dialogue state tracker with expertise in understanding and managing complex conversations to maintain context and provide accurate responses.";
pub const PERSONA_2: &str = "You are a context-aware dialogue specialist, skilled in recognizing user intents and maintaining seamless conversation flow by accurately tracking dialogue states.";
pub const PERSONA_3: &str = "You are an expert conversational analyst, proficient in monitoring and updating dialogue states to ensure coherent and contextually appropriate interactions.";

pub const FRAME: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request. Ensure that the response is clear, concise, and directly addresses the task described in the instruction. Avoid asking for personal information or making assumptions beyond the provided context.";

pub const COT_TRIGGER: &str = "Let's step by step.";

pub const ANTI_HALLUCINATION: &str = "If the value does not exist, return the value as NONE.";

pub const SELF_DISCOVER_PREAMBLE: &str = "Before answering, select the reasoning modules that fit this task, adapt each of them to the conversation, and compose them into an explicit step-by-step reasoning structure. Follow that structure to reach the answer.";

pub const TREE_OF_THOUGHT_PREAMBLE: &str = "Imagine three different experts reading the conversation. Each expert writes down one step of their reasoning and shares it with the group, then all experts go on to the next step. An expert who realizes their reasoning is wrong leaves. Give the answer the remaining experts agree on.";

/// Bumped whenever [`default_instruction`] changes wording.
pub const INSTRUCTION_VERSION: u32 = 1;

const DEFAULT_INSTRUCTION: &str = "Extract the dialogue state of the conversation in the input. For every topic the user talks about, identify its domain, list each slot the user mentions or implies, and give the value of each slot in the same order. Use the words of the conversation for values. Answer only in the form Domain : ['<domain>'] , Slot : ['<slot>', ...] , Value : ['<value>', ...] with one line per domain.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("input text is empty")]
    EmptyInput,
    #[error("{0} has no persona sentence")]
    NotPersona(PromptStrategy),
    #[error("unknown prompt strategy `{0}`")]
    UnknownStrategy(String),
    #[error("template file line {line}: {msg}")]
    Template { line: usize, msg: String },
    #[error("reading template file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStrategy {
    Cot,
    #[serde(rename = "cot-persona-1")]
    CotPersona1,
    #[serde(rename = "cot-persona-2")]
    CotPersona2,
    #[serde(rename = "cot-persona-3")]
    CotPersona3,
    SelfDiscover,
    Tot,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 6] = [
        PromptStrategy::Cot,
        PromptStrategy::CotPersona1,
        PromptStrategy::CotPersona2,
        PromptStrategy::CotPersona3,
        PromptStrategy::SelfDiscover,
        PromptStrategy::Tot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptStrategy::Cot => "cot",
            PromptStrategy::CotPersona1 => "cot-persona-1",
            PromptStrategy::CotPersona2 => "cot-persona-2",
            PromptStrategy::CotPersona3 => "cot-persona-3",
            PromptStrategy::SelfDiscover => "self-discover",
            PromptStrategy::Tot => "tot",
        }
    }

    pub fn is_cot_family(self) -> bool {
        matches!(
            self,
            PromptStrategy::Cot
                | PromptStrategy::CotPersona1
                | PromptStrategy::CotPersona2
                | PromptStrategy::CotPersona3
        )
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_owned()))
    }
}

/// A worked example shown to the model before the live input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub strategy: PromptStrategy,
    pub instruction: String,
    pub input_text: String,
    pub anti_hallucination: bool,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
}

impl PromptSpec {
    pub fn new(strategy: PromptStrategy, input_text: impl Into<String>) -> Self {
        Self {
            strategy,
            instruction: default_instruction(),
            input_text: input_text.into(),
            anti_hallucination: true,
            exemplars: Vec::new(),
        }
    }

    /// Zero, two, three or four exemplars; other counts render fine but are flagged.
    pub fn has_standard_shot_count(&self) -> bool {
        matches!(self.exemplars.len(), 0 | 2 | 3 | 4)
    }
}

/// Texts the renderer stitches together. `Default` holds the built-in set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub frame: String,
    /// Extra instruction detail placed right after the frame. Empty by default.
    pub detail: String,
    pub cot_trigger: String,
    pub personas: [String; 3],
    pub self_discover: String,
    pub tree_of_thought: String,
    pub instruction: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            frame: FRAME.to_owned(),
            detail: String::new(),
            cot_trigger: COT_TRIGGER.to_owned(),
            personas: [PERSONA_1.to_owned(), PERSONA_2.to_owned(), PERSONA_3.to_owned()],
            self_discover: SELF_DISCOVER_PREAMBLE.to_owned(),
            tree_of_thought: TREE_OF_THOUGHT_PREAMBLE.to_owned(),
            instruction: DEFAULT_INSTRUCTION.to_owned(),
        }
    }
}

impl PromptTemplates {
    /// Parses an override file. Each section starts with a `[name]` header
    /// line and runs to the next header; its trimmed body replaces the
    /// built-in text. Lines before the first header that are blank or start
    /// with `#` are ignored. Recognized names: `frame`, `detail`,
    /// `cot-trigger`, `persona-1`, `persona-2`, `persona-3`, `self-discover`,
    /// `tree-of-thought`, `instruction`.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut templates = Self::default();
        let mut current: Option<(String, usize, Vec<&str>)> = None;

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                if let Some((name, at, body)) = current.take() {
                    templates.set(&name, &body.join("\n"), at)?;
                }
                let name = trimmed[1..trimmed.len() - 1].trim().to_owned();
                current = Some((name, lineno, Vec::new()));
            } else if let Some((_, _, body)) = current.as_mut() {
                body.push(line);
            } else if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                return Err(PromptError::Template {
                    line: lineno,
                    msg: "text before the first [section] header".into(),
                });
            }
        }
        if let Some((name, at, body)) = current {
            templates.set(&name, &body.join("\n"), at)?;
        }
        Ok(templates)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, name: &str, body: &str, line: usize) -> Result<(), PromptError> {
        let body = body.trim().to_owned();
        let slot = match name {
            "frame" => &mut self.frame,
            "detail" => &mut self.detail,
            "cot-trigger" => &mut self.cot_trigger,
            "persona-1" => &mut self.personas[0],
            "persona-2" => &mut self.personas[1],
            "persona-3" => &mut self.personas[2],
            "self-discover" => &mut self.self_discover,
            "tree-of-thought" => &mut self.tree_of_thought,
            "instruction" => &mut self.instruction,
            other => {
                return Err(PromptError::Template {
                    line,
                    msg: format!("unknown section `{other}`"),
                })
            }
        };
        *slot = body;
        Ok(())
    }

    fn persona(&self, kind: PromptStrategy) -> Option<&str> {
        match kind {
            PromptStrategy::CotPersona1 => Some(&self.personas[0]),
            PromptStrategy::CotPersona2 => Some(&self.personas[1]),
            PromptStrategy::CotPersona3 => Some(&self.personas[2]),
            _ => None,
        }
    }

    pub fn render(&self, spec: &PromptSpec) -> Result<String, PromptError> {
        if spec.instruction.trim().is_empty() {
            return Err(PromptError::EmptyInstruction);
        }
        if spec.input_text.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }

        let mut parts: Vec<String> = Vec::with_capacity(8 + spec.exemplars.len());
        if let Some(persona) = self.persona(spec.strategy) {
            parts.push(persona.to_owned());
        }
        parts.push(self.frame.clone());
        if !self.detail.is_empty() {
            parts.push(self.detail.clone());
        }
        parts.push(match spec.strategy {
            PromptStrategy::SelfDiscover => self.self_discover.clone(),
            PromptStrategy::Tot => self.tree_of_thought.clone(),
            _ => self.cot_trigger.clone(),
        });
        if spec.anti_hallucination {
            parts.push(ANTI_HALLUCINATION.to_owned());
        }
        for (k, ex) in spec.exemplars.iter().enumerate() {
            parts.push(format!(
                "Example {}: Input: {} Response: {}",
                k + 1,
                ex.input,
                ex.output
            ));
        }
        parts.push(format!(
            "Instruction: {} Input: {} Response:",
            spec.instruction, spec.input_text
        ));
        Ok(parts.join(" "))
    }
}

/// Renders `spec` with the built-in templates.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, PromptError> {
    PromptTemplates::default().render(spec)
}

/// The built-in persona sentence for a persona strategy.
pub fn persona_text(kind: PromptStrategy) -> Result<&'static str, PromptError> {
    match kind {
        PromptStrategy::CotPersona1 => Ok(PERSONA_1),
        PromptStrategy::CotPersona2 => Ok(PERSONA_2),
        PromptStrategy::CotPersona3 => Ok(PERSONA_3),
        other => Err(PromptError::NotPersona(other)),
    }
}

/// The toolkit's fixed extraction instruction (see [`INSTRUCTION_VERSION`]).
/// It names the output format but no domain, slot or value vocabulary.
pub fn default_instruction() -> String {
    DEFAULT_INSTRUCTION.to_owned()
}

/// Loads a few-shot exemplar file: JSONL records `{"input": .., "output": ..}`.
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, PromptError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PromptError::Template {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Case-insensitive whole-word scan: returns the denylist entries found in `text`.
pub fn denylist_hits<'a>(text: &str, denylist: &'a [String]) -> Vec<&'a str> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    denylist
        .iter()
        .filter(|entry| {
            let needle: Vec<String> = entry
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase)
                .collect();
            !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice())
        })
        .map(String::as_str)
        .collect()
}

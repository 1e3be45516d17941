//! Dialogue contexts, `<domain, slot, value>` triples and per-turn state.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normalized sentinel a model emits when a slot has no value.
pub const NONE_VALUE: &str = "none";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("triple has an empty {0}")]
    EmptyField(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    fn prefix(self) -> &'static str {
        match self {
            Speaker::User => "USER: ",
            Speaker::System => "SYSTEM: ",
        }
    }
}

/// One utterance. The text is never blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTurn")]
pub struct Turn {
    speaker: Speaker,
    text: String,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
}

impl TryFrom<RawTurn> for Turn {
    type Error = ModelError;

    fn try_from(raw: RawTurn) -> Result<Self, Self::Error> {
        Turn::new(raw.speaker, raw.text)
    }
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        Ok(Self { speaker, text })
    }

    pub fn user(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(Speaker::User, text)
    }

    pub fn system(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(Speaker::System, text)
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// `USER: ...` / `SYSTEM: ...` line used in prompts.
    pub fn render(&self) -> String {
        format!("{}{}", self.speaker.prefix(), self.text)
    }
}

/// The turns of one dialogue up to the current user turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub dialogue_id: String,
    turns: Vec<Turn>,
}

impl DialogueContext {
    pub fn new(dialogue_id: impl Into<String>) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turns: Vec::new(),
        }
    }

    pub fn from_turns(dialogue_id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turns,
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Number of user turns so far.
    pub fn turn_index(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .count()
    }

    /// Returns a new context with `turn` appended; `self` is left as is.
    pub fn append_turn(&self, turn: Turn) -> Result<Self, ModelError> {
        if turn.text.trim().is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        let mut next = self.clone();
        next.turns.push(turn);
        Ok(next)
    }

    pub fn serialize(&self) -> String {
        self.turns
            .iter()
            .map(Turn::render)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Lower-cases, trims, and collapses internal whitespace runs to one space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A single `<domain, slot, value>` unit, stored normalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateTriple {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl StateTriple {
    pub fn new(domain: &str, slot: &str, value: &str) -> Result<Self, ModelError> {
        let domain = normalize_text(domain);
        let slot = normalize_text(slot);
        if domain.is_empty() {
            return Err(ModelError::EmptyField("domain"));
        }
        if slot.is_empty() {
            return Err(ModelError::EmptyField("slot"));
        }
        Ok(Self {
            domain,
            slot,
            value: normalize_text(value),
        })
    }

    pub fn is_none(&self) -> bool {
        self.value == NONE_VALUE
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.domain, &self.slot)
    }
}

impl fmt::Display for StateTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.domain, self.slot, self.value)
    }
}

/// Set of triples with at most one value per `(domain, slot)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DialogueState {
    slots: BTreeMap<(String, String), String>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from triples; a later triple replaces an earlier one with the same key.
    pub fn from_triples<I: IntoIterator<Item = StateTriple>>(triples: I) -> Self {
        let mut state = Self::new();
        for t in triples {
            state.insert(t);
        }
        state
    }

    /// Inserts `t`, returning the value it replaced.
    pub fn insert(&mut self, t: StateTriple) -> Option<String> {
        self.slots.insert((t.domain, t.slot), t.value)
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.slots
            .get(&(domain.to_owned(), slot.to_owned()))
            .map(String::as_str)
    }

    pub fn contains(&self, t: &StateTriple) -> bool {
        self.get(&t.domain, &t.slot) == Some(t.value.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Triples in `(domain, slot)` order.
    pub fn triples(&self) -> impl Iterator<Item = StateTriple> + '_ {
        self.slots.iter().map(|((d, s), v)| StateTriple {
            domain: d.clone(),
            slot: s.clone(),
            value: v.clone(),
        })
    }

    /// Copy of the state with every `NONE` triple removed.
    pub fn without_none(&self) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .filter(|(_, v)| v.as_str() != NONE_VALUE)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Cumulative update: newest value wins per key and `NONE` triples are ignored.
    pub fn accumulate<'a, I>(&self, new_triples: I) -> Self
    where
        I: IntoIterator<Item = &'a StateTriple>,
    {
        let mut next = self.clone();
        for t in new_triples {
            if !t.is_none() {
                next.insert(t.clone());
            }
        }
        next
    }
}

impl FromIterator<StateTriple> for DialogueState {
    fn from_iter<I: IntoIterator<Item = StateTriple>>(iter: I) -> Self {
        Self::from_triples(iter)
    }
}

impl Serialize for DialogueState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.triples())
    }
}

impl<'de> Deserialize<'de> for DialogueState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Loose {
            domain: String,
            slot: String,
            value: String,
        }
        let raw = Vec::<Loose>::deserialize(deserializer)?;
        raw.into_iter()
            .map(|t| StateTriple::new(&t.domain, &t.slot, &t.value))
            .collect::<Result<Vec<_>, _>>()
            .map(DialogueState::from_triples)
            .map_err(serde::de::Error::custom)
    }
}

/// `accumulate_state` as a free function.
pub fn accumulate_state(prev: &DialogueState, new_triples: &[StateTriple]) -> DialogueState {
    prev.accumulate(new_triples)
}

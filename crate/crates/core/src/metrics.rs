//! Joint goal accuracy, slot F1 and slot accuracy.
//!
//! `NONE` triples are removed from both sides before scoring. Slot F1 is
//! micro-averaged over all turns. Slot accuracy is keyed on gold
//! `(domain, slot)` pairs only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue_model::DialogueState;
use crate::state_parser::ErrorReport;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no turns to score")]
    EmptyTurns,
    #[error("no gold slots in any turn")]
    NoGoldSlots,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnPair {
    pub predicted: DialogueState,
    pub gold: DialogueState,
}

impl TurnPair {
    pub fn new(predicted: DialogueState, gold: DialogueState) -> Self {
        Self { predicted, gold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let predicted = tp + fp;
        let actual = tp + fn_;
        if predicted == 0 && actual == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// Whether gold and predictions are full states per turn or per-turn updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    #[default]
    Cumulative,
    Delta,
}

/// Triples of `cur` that are new or changed relative to `prev`.
pub fn state_delta(prev: &DialogueState, cur: &DialogueState) -> DialogueState {
    cur.triples().filter(|t| !prev.contains(t)).collect()
}

/// Per-turn updates of a sequence of accumulated states.
pub fn to_deltas(states: &[DialogueState]) -> Vec<DialogueState> {
    let empty = DialogueState::new();
    states
        .iter()
        .enumerate()
        .map(|(i, s)| state_delta(if i == 0 { &empty } else { &states[i - 1] }, s))
        .collect()
}

fn non_empty(turns: &[TurnPair]) -> Result<(), MetricError> {
    if turns.is_empty() {
        Err(MetricError::EmptyTurns)
    } else {
        Ok(())
    }
}

pub fn jga(turns: &[TurnPair]) -> Result<f64, MetricError> {
    non_empty(turns)?;
    let exact = turns
        .iter()
        .filter(|t| t.predicted.without_none() == t.gold.without_none())
        .count();
    Ok(exact as f64 / turns.len() as f64)
}

fn confusion(turns: &[TurnPair]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for turn in turns {
        let pred = turn.predicted.without_none();
        let gold = turn.gold.without_none();
        let hits = pred.triples().filter(|t| gold.contains(t)).count();
        tp += hits;
        fp += pred.len() - hits;
        fn_ += gold.len() - hits;
    }
    (tp, fp, fn_)
}

pub fn slot_f1(turns: &[TurnPair]) -> Result<PrfScore, MetricError> {
    non_empty(turns)?;
    let (tp, fp, fn_) = confusion(turns);
    Ok(PrfScore::from_counts(tp, fp, fn_))
}

pub fn slot_accuracy(turns: &[TurnPair]) -> Result<f64, MetricError> {
    non_empty(turns)?;
    let mut total = 0usize;
    let mut correct = 0usize;
    for turn in turns {
        let pred = turn.predicted.without_none();
        for g in turn.gold.without_none().triples() {
            total += 1;
            if pred.contains(&g) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricError::NoGoldSlots);
    }
    Ok(correct as f64 / total as f64)
}

/// Micro slot F1 restricted to each domain seen on either side.
pub fn per_domain_f1(turns: &[TurnPair]) -> BTreeMap<String, PrfScore> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for turn in turns {
        let pred = turn.predicted.without_none();
        let gold = turn.gold.without_none();
        for p in pred.triples() {
            let c = counts.entry(p.domain.clone()).or_default();
            if gold.contains(&p) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for g in gold.triples() {
            if !pred.contains(&g) {
                counts.entry(g.domain.clone()).or_default().2 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(d, (tp, fp, fn_))| (d, PrfScore::from_counts(tp, fp, fn_)))
        .collect()
}

/// Evaluation report written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jga: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    /// `None` when no turn has a gold slot.
    pub slot_accuracy: Option<f64>,
    pub turn_count: usize,
    pub parse_failure_count: usize,
    pub error_report: ErrorReport,
    pub state_mode: StateMode,
    pub averaging: String,
}

impl EvalReport {
    pub fn compute(
        turns: &[TurnPair],
        state_mode: StateMode,
        parse_failure_count: usize,
        error_report: ErrorReport,
    ) -> Result<Self, MetricError> {
        let prf = slot_f1(turns)?;
        let slot_accuracy = match slot_accuracy(turns) {
            Ok(v) => Some(v),
            Err(MetricError::NoGoldSlots) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            jga: jga(turns)?,
            slot_precision: prf.precision,
            slot_recall: prf.recall,
            slot_f1: prf.f1,
            slot_accuracy,
            turn_count: turns.len(),
            parse_failure_count,
            error_report,
            state_mode,
            averaging: "micro".into(),
        })
    }
}

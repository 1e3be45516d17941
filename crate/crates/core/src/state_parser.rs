//! Parses raw completions of the form
//! `Domain : ['general'] , Slot : ['plan', 'activity'] , Value : ['canning', 'NONE']`
//! into dialogue states, and sorts wrong predictions into error categories.
//!
//! Model output is untrusted, so parsing never fails: problems are reported
//! as [`Diagnostic`]s next to whatever could be recovered.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue_model::{normalize_text, DialogueState, StateTriple, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    ParseFailure,
    ListLengthMismatch,
    EmptyField,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub state: DialogueState,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutcome {
    pub fn is_failure(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::ParseFailure)
    }

    /// Every recovered triple, `NONE` values included.
    pub fn triples(&self) -> Vec<StateTriple> {
        self.state.triples().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Domain,
    Slot,
    Value,
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(domain|slot|value)s?\s*[:=]?\s*\[").unwrap())
}

fn is_quote(c: char) -> bool {
    matches!(c, '\'' | '"' | '`' | '‘' | '’' | '“' | '”' | '´')
}

/// Reads a bracketed list body starting right after `[`. Returns the items and
/// the byte offset just past the closing `]` (or end of input).
fn read_list(s: &str) -> (Vec<String>, usize) {
    let bytes_len = s.len();
    let mut items = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &s[pos..];
        let skipped = rest
            .find(|c: char| !(c.is_whitespace() || c == ','))
            .unwrap_or(rest.len());
        pos += skipped;
        let Some(c) = s[pos..].chars().next() else {
            return (items, bytes_len);
        };
        if c == ']' {
            return (items, pos + 1);
        }
        if is_quote(c) {
            let start = pos + c.len_utf8();
            match find_closing_quote(&s[start..]) {
                Some(off) => {
                    items.push(s[start..start + off].to_owned());
                    let q = s[start + off..].chars().next().unwrap();
                    pos = start + off + q.len_utf8();
                }
                None => {
                    // unterminated quote: take everything up to `]`
                    let end = s[start..].find(']').map_or(bytes_len, |e| start + e);
                    let raw = s[start..end].trim().trim_end_matches(is_quote);
                    items.push(raw.to_owned());
                    return (items, (end + 1).min(bytes_len));
                }
            }
        } else {
            let end = s[pos..]
                .find([',', ']'])
                .map_or(bytes_len, |e| pos + e);
            items.push(s[pos..end].trim().to_owned());
            pos = end;
        }
    }
}

/// Offset of a quote character that is followed (after optional whitespace)
/// by `,` or `]`.
fn find_closing_quote(s: &str) -> Option<usize> {
    for (i, c) in s.char_indices() {
        if is_quote(c) {
            let after = s[i + c.len_utf8()..].trim_start();
            if after.is_empty() || after.starts_with(',') || after.starts_with(']') {
                return Some(i);
            }
        }
    }
    None
}

#[derive(Default)]
struct Block {
    domains: Option<Vec<String>>,
    slots: Option<Vec<String>>,
    values: Option<Vec<String>>,
}

impl Block {
    fn is_empty(&self) -> bool {
        self.domains.is_none() && self.slots.is_none() && self.values.is_none()
    }

    fn field(&mut self, label: Label) -> &mut Option<Vec<String>> {
        match label {
            Label::Domain => &mut self.domains,
            Label::Slot => &mut self.slots,
            Label::Value => &mut self.values,
        }
    }

    fn flush(self, out: &mut Vec<StateTriple>, diags: &mut Vec<Diagnostic>) {
        let domains = self.domains.unwrap_or_default();
        let slots = self.slots.unwrap_or_default();
        let values = self.values.unwrap_or_default();

        let broadcast = domains.len() == 1;
        let mut n = slots.len().min(values.len());
        if !broadcast {
            n = n.min(domains.len());
        }
        let domains_ok = broadcast || domains.len() == slots.len();
        if slots.len() != values.len() || !domains_ok {
            diags.push(Diagnostic {
                kind: DiagnosticKind::ListLengthMismatch,
                detail: format!(
                    "{} domain(s), {} slot(s), {} value(s); kept {}",
                    domains.len(),
                    slots.len(),
                    values.len(),
                    n
                ),
            });
        }

        for i in 0..n {
            let domain = if broadcast { &domains[0] } else { &domains[i] };
            let (slot, value) = (&slots[i], &values[i]);
            if normalize_text(value).is_empty() {
                diags.push(Diagnostic {
                    kind: DiagnosticKind::EmptyField,
                    detail: format!("empty value for slot `{}`", slot.trim()),
                });
                continue;
            }
            match StateTriple::new(domain, slot, value) {
                Ok(t) => out.push(t),
                Err(e) => diags.push(Diagnostic {
                    kind: DiagnosticKind::EmptyField,
                    detail: e.to_string(),
                }),
            }
        }
    }
}

/// Extracts every Domain/Slot/Value group from a completion.
///
/// Labels are case-insensitive and may be plural; items may use straight,
/// curly or backtick quotes. A new group starts whenever a label repeats. A
/// single domain is broadcast over all slot/value pairs of its group. When
/// list lengths disagree the lists are zipped to the shortest one and a
/// `ListLengthMismatch` is reported. Later triples win on key collisions.
pub fn parse_state(text: &str) -> ParseOutcome {
    let mut triples = Vec::new();
    let mut diagnostics = Vec::new();
    let mut block = Block::default();
    let mut found_any = false;

    let mut pos = 0;
    while let Some(m) = label_regex().captures(&text[pos..]) {
        let whole = m.get(0).unwrap();
        let label = match m[1].to_ascii_lowercase().as_str() {
            "domain" => Label::Domain,
            "slot" => Label::Slot,
            _ => Label::Value,
        };
        let body_start = pos + whole.end();
        let (items, consumed) = read_list(&text[body_start..]);
        pos = body_start + consumed;
        found_any = true;

        // a repeated label, or a new domain after a complete group, opens a new group
        let complete = block.slots.is_some() && block.values.is_some();
        if block.field(label).is_some() || (label == Label::Domain && complete) {
            std::mem::take(&mut block).flush(&mut triples, &mut diagnostics);
        }
        *block.field(label) = Some(items);
    }
    if !block.is_empty() {
        block.flush(&mut triples, &mut diagnostics);
    }

    if !found_any {
        return ParseOutcome {
            state: DialogueState::new(),
            diagnostics: vec![Diagnostic {
                kind: DiagnosticKind::ParseFailure,
                detail: "no Domain/Slot/Value lists found".into(),
            }],
        };
    }
    ParseOutcome {
        state: DialogueState::from_triples(triples),
        diagnostics,
    }
}

/// Canonical rendering: one line per domain, keys in sorted order.
pub fn format_state(state: &DialogueState) -> String {
    let mut by_domain: BTreeMap<String, Vec<StateTriple>> = BTreeMap::new();
    for t in state.triples() {
        by_domain.entry(t.domain.clone()).or_default().push(t);
    }
    by_domain
        .iter()
        .map(|(domain, ts)| {
            let slots: Vec<String> = ts.iter().map(|t| format!("'{}'", t.slot)).collect();
            let values: Vec<String> = ts
                .iter()
                .map(|t| {
                    if t.is_none() {
                        "'NONE'".to_owned()
                    } else {
                        format!("'{}'", t.value)
                    }
                })
                .collect();
            format!(
                "Domain : ['{}'] , Slot : [{}] , Value : [{}]",
                domain,
                slots.join(", "),
                values.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn normalize_triple(t: &StateTriple) -> StateTriple {
    StateTriple {
        domain: normalize_text(&t.domain),
        slot: normalize_text(&t.slot),
        value: normalize_text(&t.value),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NonexistentValue,
    Synonym,
    Unclassified,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub domain: String,
    pub slot: String,
    pub predicted: Option<String>,
    pub gold: Option<String>,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub nonexistent_value_count: usize,
    pub synonym_count: usize,
    pub total_errors: usize,
    pub samples: Vec<ErrorSample>,
}

impl ErrorReport {
    /// Adds counts from `other`, keeping at most `max_samples` samples overall.
    pub fn merge(&mut self, other: ErrorReport, max_samples: usize) {
        self.nonexistent_value_count += other.nonexistent_value_count;
        self.synonym_count += other.synonym_count;
        self.total_errors += other.total_errors;
        let room = max_samples.saturating_sub(self.samples.len());
        self.samples.extend(other.samples.into_iter().take(room));
    }
}

/// Sorts wrong predictions into non-existent values and synonyms.
///
/// Checks run in this order for each predicted triple that is not in gold:
/// 1. junk value (punctuation only, one repeated character, or a placeholder
///    token) => non-existent;
/// 2. gold has the same key and one value's tokens contain the other's => synonym;
/// 3. value does not occur in any dialogue turn (when turns are given) => non-existent;
/// 4. otherwise unclassified.
///
/// Gold keys with no prediction count toward `total_errors` as misses.
#[derive(Debug, Clone)]
pub struct ErrorClassifier {
    pub placeholders: Vec<String>,
}

impl Default for ErrorClassifier {
    fn default() -> Self {
        Self {
            placeholders: ["general", "...", "n/a", "null", "unknown", "undefined", "placeholder", "tbd"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl ErrorClassifier {
    pub fn is_junk(&self, value: &str) -> bool {
        let v = normalize_text(value);
        if v.is_empty() {
            return true;
        }
        if v.chars().all(|c| !c.is_alphanumeric()) {
            return true;
        }
        let mut chars = v.chars();
        let first = chars.next().unwrap();
        if v.chars().count() >= 3 && chars.all(|c| c == first) {
            return true;
        }
        self.placeholders.iter().any(|p| normalize_text(p) == v)
    }

    pub fn classify(
        &self,
        pred: &DialogueState,
        gold: &DialogueState,
        turns: Option<&[Turn]>,
    ) -> ErrorReport {
        let pred = pred.without_none();
        let gold = gold.without_none();
        let turn_texts: Option<Vec<String>> =
            turns.map(|ts| ts.iter().map(|t| normalize_text(t.text())).collect());

        let mut report = ErrorReport::default();
        for p in pred.triples() {
            if gold.contains(&p) {
                continue;
            }
            let gold_value = gold.get(&p.domain, &p.slot);
            let kind = if self.is_junk(&p.value) {
                ErrorKind::NonexistentValue
            } else if gold_value.is_some_and(|g| token_containment(&p.value, g)) {
                ErrorKind::Synonym
            } else if turn_texts
                .as_ref()
                .is_some_and(|texts| !texts.iter().any(|t| t.contains(&p.value)))
            {
                ErrorKind::NonexistentValue
            } else {
                ErrorKind::Unclassified
            };
            match kind {
                ErrorKind::NonexistentValue => report.nonexistent_value_count += 1,
                ErrorKind::Synonym => report.synonym_count += 1,
                _ => {}
            }
            report.total_errors += 1;
            report.samples.push(ErrorSample {
                domain: p.domain.clone(),
                slot: p.slot.clone(),
                predicted: Some(p.value.clone()),
                gold: gold_value.map(str::to_owned),
                kind,
            });
        }
        for g in gold.triples() {
            if pred.get(&g.domain, &g.slot).is_none() {
                report.total_errors += 1;
                report.samples.push(ErrorSample {
                    domain: g.domain,
                    slot: g.slot,
                    predicted: None,
                    gold: Some(g.value),
                    kind: ErrorKind::Missing,
                });
            }
        }
        report
    }
}

/// `classify_errors` with the default junk patterns.
pub fn classify_errors(
    pred: &DialogueState,
    gold: &DialogueState,
    turns: Option<&[Turn]>,
) -> ErrorReport {
    ErrorClassifier::default().classify(pred, gold, turns)
}

fn token_containment(a: &str, b: &str) -> bool {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() || tb.is_empty() || ta == tb {
        return false;
    }
    let subset = |x: &[&str], y: &[&str]| x.iter().all(|w| y.contains(w));
    subset(&ta, &tb) || subset(&tb, &ta)
}

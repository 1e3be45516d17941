//! Corpus loaders, prediction / report files and k-fold splitting.
//!
//! Three input shapes are understood:
//!
//! * `multiwoz` — a MultiWOZ 2.x `data.json` object keyed by dialogue id.
//!   Turns alternate user / system; the belief state after user turn *k*
//!   is read from the `metadata` of the following system turn
//!   (`semi` and `book` slots, skipping `""`, `"not mentioned"` and the
//!   `booked` list).
//! * `sgd` — a Schema-Guided Dialogue file (array of dialogues). Services
//!   are flattened to domains by dropping the numeric suffix and
//!   lower-casing (`Restaurants_1` → `restaurants`); the first listed value
//!   of each slot is taken and states accumulate across services.
//! * `jsonl` — one `{dialogue_id, turns: [{speaker, text}], gold?}` object per
//!   line, `gold` being one list of `{domain, slot, value}` per user turn.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialogue_model::{DialogueContext, DialogueState, Speaker, StateTriple, Turn};
use crate::state_parser::Diagnostic;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown corpus format `{0}` (expected multiwoz, sgd or jsonl)")]
    UnknownFormat(String),
    #[error("{path}: no valid dialogues ({skipped} malformed records skipped)")]
    NoDialogues { path: PathBuf, skipped: usize },
    #[error("{path}:{line}: {source}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("cannot split {have} items into {k} folds")]
    TooFewItems { have: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
    /// One state per user turn.
    #[serde(default, rename = "gold", skip_serializing_if = "Option::is_none")]
    pub gold_states: Option<Vec<DialogueState>>,
}

impl AnnotatedDialogue {
    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker() == Speaker::User).count()
    }

    pub fn is_valid(&self) -> bool {
        !self.dialogue_id.trim().is_empty()
            && self
                .gold_states
                .as_ref()
                .is_none_or(|g| g.len() == self.user_turn_count())
    }

    /// Context up to and including the `k`-th user turn (0-based).
    pub fn context_through_user_turn(&self, k: usize) -> DialogueContext {
        let mut seen = 0;
        let mut turns = Vec::new();
        for t in &self.turns {
            turns.push(t.clone());
            if t.speaker() == Speaker::User {
                if seen == k {
                    break;
                }
                seen += 1;
            }
        }
        DialogueContext::from_turns(self.dialogue_id.clone(), turns)
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> + '_ {
        self.turns.iter().filter(|t| t.speaker() == Speaker::User)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[serde(rename = "multiwoz")]
    MultiWozJson,
    #[serde(rename = "sgd")]
    SgdJson,
    #[serde(rename = "jsonl")]
    PlainJsonl,
}

impl FromStr for CorpusFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiwoz" | "multiwoz-json" => Ok(Self::MultiWozJson),
            "sgd" | "sgd-json" => Ok(Self::SgdJson),
            "jsonl" | "plain-jsonl" => Ok(Self::PlainJsonl),
            other => Err(DatasetError::UnknownFormat(other.to_owned())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MultiWozJson => "multiwoz",
            Self::SgdJson => "sgd",
            Self::PlainJsonl => "jsonl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: CorpusFormat,
    pub path: PathBuf,
    pub dialogue_count: usize,
    pub has_gold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub dialogues: Vec<AnnotatedDialogue>,
    /// Malformed records that were dropped.
    pub skipped: usize,
}

/// Reads and normalizes a corpus. Malformed records are skipped and counted.
pub fn load_dialogues(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Unreadable {
        path: path.to_owned(),
        source,
    })?;
    let (dialogues, skipped) = match format {
        CorpusFormat::PlainJsonl => parse_jsonl(&text),
        CorpusFormat::MultiWozJson => parse_multiwoz(&text),
        CorpusFormat::SgdJson => parse_sgd(&text),
    };
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed records", path.display());
    }
    if dialogues.is_empty() {
        return Err(DatasetError::NoDialogues { path: path.to_owned(), skipped });
    }
    let manifest = CorpusManifest {
        format,
        path: path.to_owned(),
        dialogue_count: dialogues.len(),
        has_gold: dialogues.iter().all(|d| d.gold_states.is_some()),
    };
    Ok(LoadedCorpus { manifest, dialogues, skipped })
}

fn parse_jsonl(text: &str) -> (Vec<AnnotatedDialogue>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<AnnotatedDialogue>(line) {
            Ok(d) if d.is_valid() => out.push(d),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

// ---------------------------------------------------------------- MultiWOZ

fn multiwoz_state(metadata: &Value) -> Option<DialogueState> {
    let domains = metadata.as_object()?;
    let mut state = DialogueState::new();
    for (domain, parts) in domains {
        for part in ["semi", "book"] {
            let Some(slots) = parts.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, value) in slots {
                let Some(v) = value.as_str() else { continue };
                let v = v.trim();
                if v.is_empty() || v.eq_ignore_ascii_case("not mentioned") {
                    continue;
                }
                state.insert(StateTriple::new(domain, slot, v).ok()?);
            }
        }
    }
    Some(state)
}

fn multiwoz_dialogue(id: &str, record: &Value) -> Option<AnnotatedDialogue> {
    let log = record.get("log")?.as_array()?;
    let mut turns = Vec::with_capacity(log.len());
    let mut gold = Vec::new();
    for (i, entry) in log.iter().enumerate() {
        let text = entry.get("text")?.as_str()?;
        if i % 2 == 0 {
            turns.push(Turn::user(text).ok()?);
        } else {
            turns.push(Turn::system(text).ok()?);
            gold.push(multiwoz_state(entry.get("metadata")?)?);
        }
    }
    if turns.is_empty() {
        return None;
    }
    // a trailing user turn has no following annotation
    let user_turns = turns.len().div_ceil(2);
    let gold_states = (gold.len() == user_turns).then_some(gold);
    let d = AnnotatedDialogue {
        dialogue_id: id.trim_end_matches(".json").to_owned(),
        turns,
        gold_states,
    };
    d.is_valid().then_some(d)
}

fn parse_multiwoz(text: &str) -> (Vec<AnnotatedDialogue>, usize) {
    let Ok(Value::Object(root)) = serde_json::from_str::<Value>(text) else {
        return (Vec::new(), usize::from(!text.trim().is_empty()));
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    for (id, record) in &root {
        match multiwoz_dialogue(id, record) {
            Some(d) => out.push(d),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

// ---------------------------------------------------------------- SGD

/// `Restaurants_1` → `restaurants`.
pub fn sgd_service_domain(service: &str) -> String {
    let base = match service.rsplit_once('_') {
        Some((head, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => head,
        _ => service,
    };
    base.to_lowercase()
}

fn sgd_dialogue(record: &Value) -> Option<AnnotatedDialogue> {
    let id = record.get("dialogue_id")?.as_str()?;
    let mut turns = Vec::new();
    let mut gold = Vec::new();
    let mut state = DialogueState::new();
    for t in record.get("turns")?.as_array()? {
        let text = t.get("utterance")?.as_str()?;
        let speaker = t.get("speaker")?.as_str()?;
        if speaker.eq_ignore_ascii_case("user") {
            turns.push(Turn::user(text).ok()?);
            for frame in t.get("frames")?.as_array()? {
                let domain = sgd_service_domain(frame.get("service")?.as_str()?);
                let Some(slots) = frame.pointer("/state/slot_values").and_then(Value::as_object) else {
                    continue;
                };
                for (slot, values) in slots {
                    if let Some(v) = values.as_array()?.first().and_then(Value::as_str) {
                        state.insert(StateTriple::new(&domain, slot, v).ok()?);
                    }
                }
            }
            gold.push(state.clone());
        } else {
            turns.push(Turn::system(text).ok()?);
        }
    }
    let d = AnnotatedDialogue {
        dialogue_id: id.to_owned(),
        turns,
        gold_states: Some(gold),
    };
    (d.user_turn_count() > 0 && d.is_valid()).then_some(d)
}

fn parse_sgd(text: &str) -> (Vec<AnnotatedDialogue>, usize) {
    let Ok(Value::Array(records)) = serde_json::from_str::<Value>(text) else {
        return (Vec::new(), usize::from(!text.trim().is_empty()));
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in &records {
        match sgd_dialogue(r) {
            Some(d) => out.push(d),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

// ---------------------------------------------------------------- writers

/// Writes dialogues in the `jsonl` corpus format.
pub fn write_dialogues(path: &Path, dialogues: &[AnnotatedDialogue]) -> Result<(), DatasetError> {
    write_jsonl(path, None, dialogues)
}

/// Per-user-turn extraction result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    /// 0-based user-turn index.
    pub turn: usize,
    pub predicted_state: DialogueState,
    pub diagnostics: Vec<Diagnostic>,
}

/// JSONL writer. When `provenance` is given it is written first as a
/// `{"provenance": …}` line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    provenance: Option<&Value>,
    records: &[T],
) -> Result<(), DatasetError> {
    let werr = |source| DatasetError::Write { path: path.to_owned(), source };
    let file = fs::File::create(path).map_err(werr)?;
    let mut w = BufWriter::new(file);
    let mut line = |v: String| writeln!(w, "{v}");
    if let Some(p) = provenance {
        let header = serde_json::json!({ "provenance": p });
        line(header.to_string()).map_err(werr)?;
    }
    for r in records {
        let json = serde_json::to_string(r).expect("records serialize");
        line(json).map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Reads a JSONL file written by [`write_jsonl`]; returns the provenance
/// header (if any) and the records.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Value>, Vec<T>), DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Unreadable {
        path: path.to_owned(),
        source,
    })?;
    let mut provenance = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(Value::Object(mut m)) = serde_json::from_str::<Value>(line) {
                if m.len() == 1 && m.contains_key("provenance") {
                    provenance = m.remove("provenance");
                    continue;
                }
            }
        }
        let r = serde_json::from_str(line).map_err(|source| DatasetError::BadRecord {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?;
        records.push(r);
    }
    Ok((provenance, records))
}

pub fn write_predictions(
    path: &Path,
    provenance: Option<&Value>,
    records: &[PredictionRecord],
) -> Result<(), DatasetError> {
    write_jsonl(path, provenance, records)
}

pub fn read_predictions(path: &Path) -> Result<(Option<Value>, Vec<PredictionRecord>), DatasetError> {
    read_jsonl(path)
}

/// Pretty-printed JSON report; `provenance` is added as a top-level field.
pub fn write_report<T: Serialize>(path: &Path, report: &T, provenance: Option<&Value>) -> Result<(), DatasetError> {
    let mut value = serde_json::to_value(report).expect("reports serialize");
    if let (Some(p), Value::Object(map)) = (provenance, &mut value) {
        map.insert("provenance".into(), p.clone());
    }
    let text = serde_json::to_string_pretty(&value).expect("reports serialize") + "\n";
    fs::write(path, text).map_err(|source| DatasetError::Write { path: path.to_owned(), source })
}

// ---------------------------------------------------------------- folds

/// Shuffles `items` with `seed` and deals them round-robin into `k` folds;
/// the first `len % k` folds get one extra item. Each fold keeps the
/// original item order.
pub fn kfold_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>, DatasetError> {
    if k == 0 || items.len() < k {
        return Err(DatasetError::TooFewItems { have: items.len(), k });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    Ok(folds
        .into_iter()
        .map(|mut f| {
            f.sort_unstable();
            f.into_iter().map(|i| items[i].clone()).collect()
        })
        .collect())
}

/// Path of a file in the bundled fixture directory.
pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn format_names() {
        assert_eq!("SGD".parse::<CorpusFormat>().unwrap(), CorpusFormat::SgdJson);
        assert_eq!(CorpusFormat::MultiWozJson.to_string(), "multiwoz");
        assert!(matches!("csv".parse::<CorpusFormat>(), Err(DatasetError::UnknownFormat(_))));
    }

    #[test]
    fn jsonl_without_gold() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            r#"{"dialogue_id":"a","turns":[{"speaker":"user","text":"hi"}]}
not json
"#,
        )
        .unwrap();
        let c = load_dialogues(&p, CorpusFormat::PlainJsonl).unwrap();
        assert_eq!(c.dialogues.len(), 1);
        assert_eq!(c.skipped, 1);
        assert!(!c.manifest.has_gold);
    }

    #[test]
    fn empty_and_missing_files() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "").unwrap();
        assert!(matches!(
            load_dialogues(&p, CorpusFormat::PlainJsonl),
            Err(DatasetError::NoDialogues { skipped: 0, .. })
        ));
        assert!(matches!(
            load_dialogues(&dir.path().join("nope"), CorpusFormat::SgdJson),
            Err(DatasetError::Unreadable { .. })
        ));
    }

    #[test]
    fn gold_length_must_match_user_turns() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            r#"{"dialogue_id":"a","turns":[{"speaker":"user","text":"hi"}],"gold":[[],[]]}
{"dialogue_id":"b","turns":[{"speaker":"user","text":"hi"}],"gold":[[{"domain":"Hotel","slot":"area","value":" East "}]]}
"#,
        )
        .unwrap();
        let c = load_dialogues(&p, CorpusFormat::PlainJsonl).unwrap();
        assert_eq!((c.dialogues.len(), c.skipped), (1, 1));
        assert_eq!(c.dialogues[0].gold_states.as_ref().unwrap()[0].get("hotel", "area"), Some("east"));
    }

    #[test]
    fn multiwoz_shape() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("data.json");
        let meta = |area: &str| {
            serde_json::json!({
                "hotel": {"book": {"booked": [], "people": ""}, "semi": {"area": area, "parking": "not mentioned"}},
                "taxi": {"book": {"booked": []}, "semi": {"leaveAt": ""}}
            })
        };
        let doc = serde_json::json!({
            "PMUL1.json": {"log": [
                {"text": "a hotel in the east", "metadata": {}},
                {"text": "sure", "metadata": meta("east")},
                {"text": "actually west", "metadata": {}},
                {"text": "ok", "metadata": meta("west")}
            ]},
            "BROKEN.json": {"goal": {}}
        });
        fs::write(&p, doc.to_string()).unwrap();
        let c = load_dialogues(&p, CorpusFormat::MultiWozJson).unwrap();
        assert_eq!(c.skipped, 1);
        let d = &c.dialogues[0];
        assert_eq!(d.dialogue_id, "PMUL1");
        let gold = d.gold_states.as_ref().unwrap();
        assert_eq!(gold.len(), 2);
        assert_eq!(gold[0].len(), 1);
        assert_eq!(gold[1].get("hotel", "area"), Some("west"));
    }

    #[test]
    fn sgd_shape() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("dialogues_001.json");
        let doc = serde_json::json!([{
            "dialogue_id": "1_00000",
            "turns": [
                {"speaker": "USER", "utterance": "Find me food in San Jose",
                 "frames": [{"service": "Restaurants_1", "state": {"slot_values": {"city": ["San Jose", "SJ"]}}}]},
                {"speaker": "SYSTEM", "utterance": "What cuisine?", "frames": []},
                {"speaker": "USER", "utterance": "And a cab",
                 "frames": [{"service": "RideSharing_2", "state": {"slot_values": {"shared_ride": ["False"]}}}]}
            ]
        }]);
        fs::write(&p, doc.to_string()).unwrap();
        let c = load_dialogues(&p, CorpusFormat::SgdJson).unwrap();
        let gold = c.dialogues[0].gold_states.as_ref().unwrap();
        assert_eq!(gold[0].get("restaurants", "city"), Some("san jose"));
        assert_eq!(gold[1].len(), 2);
        assert_eq!(gold[1].get("ridesharing", "shared_ride"), Some("false"));
        assert_eq!(sgd_service_domain("Hotels"), "hotels");
    }

    #[test]
    fn predictions_round_trip() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("pred.jsonl");
        let state = DialogueState::from_triples([StateTriple::new("café", "naïve slot", "東京").unwrap()]);
        let recs = vec![PredictionRecord {
            dialogue_id: "d".into(),
            turn: 0,
            predicted_state: state,
            diagnostics: vec![],
        }];
        let prov = serde_json::json!({"version": "x", "seed": 1});
        write_predictions(&p, Some(&prov), &recs).unwrap();
        let (back_prov, back) = read_predictions(&p).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back_prov, Some(prov));

        write_predictions(&p, None, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
        assert_eq!(read_predictions(&p).unwrap(), (None, vec![]));
    }

    #[test]
    fn folds() {
        let items: Vec<u32> = (0..10).collect();
        let f = kfold_split(&items, 10, 3).unwrap();
        assert!(f.iter().all(|x| x.len() == 1));
        let items: Vec<u32> = (0..11).collect();
        let f = kfold_split(&items, 10, 3).unwrap();
        assert_eq!(f.iter().filter(|x| x.len() == 2).count(), 1);
        assert_eq!(f, kfold_split(&items, 10, 3).unwrap());
        assert!(matches!(kfold_split(&items, 12, 0), Err(DatasetError::TooFewItems { have: 11, k: 12 })));
    }
}

use std::collections::BTreeSet;

use proptest::prelude::*;
use serde::Deserialize;
use statelink::dataset_io::fixture_path;
use statelink::state_parser::{classify_errors, format_state, normalize_triple, parse_state, DiagnosticKind, ErrorKind};
use statelink::{DialogueState, StateTriple, Turn};

type Listed = &'static [(&'static str, &'static str, &'static str)];

fn set(triples: &[(&str, &str, &str)]) -> BTreeSet<StateTriple> {
    triples.iter().map(|(d, s, v)| StateTriple::new(d, s, v).unwrap()).collect()
}

#[test]
fn reference_completions_parse_to_listed_triples() {
    let cases: &[(&str, Listed)] = &[
        (
            "Domain : ['General'] , Slot : ['hobby'] , Value : ['canning or whittling']",
            &[("general", "hobby", "canning or whittling")],
        ),
        (
            "Domain : ['General'] Slot : ['plan', 'activity'] Value : ['canning', 'NONE']",
            &[("general", "plan", "canning"), ("general", "activity", "none")],
        ),
        (
            "Domain : [`General'] Slot : [`plan', `activity'] Value : [`canning', `NONE']",
            &[("general", "plan", "canning"), ("general", "activity", "none")],
        ),
    ];
    for (text, expected) in cases {
        let out = parse_state(text);
        assert!(out.diagnostics.is_empty(), "{text}: {:?}", out.diagnostics);
        let got: BTreeSet<StateTriple> = out.triples().into_iter().collect();
        assert_eq!(got, set(expected), "{text}");
    }
}

#[test]
fn none_is_kept_by_the_parser_but_dropped_by_accumulation() {
    let out = parse_state("Domain : ['General'] Slot : ['plan', 'activity'] Value : ['canning', 'NONE']");
    let state = DialogueState::new().accumulate(&out.triples());
    assert_eq!(state.len(), 1);
    assert_eq!(state.get("general", "plan"), Some("canning"));
}

#[test]
fn prose_is_a_parse_failure() {
    let out = parse_state("I think the user wants something.");
    assert!(out.triples().is_empty());
    assert!(out.diagnostics.iter().any(|d| d.kind == DiagnosticKind::ParseFailure));
}

#[derive(Deserialize)]
struct ErrorCase {
    turns: Vec<Turn>,
    gold: DialogueState,
    predicted: DialogueState,
    expected: Expected,
}

#[derive(Deserialize)]
struct Expected {
    nonexistent_value: Vec<[String; 3]>,
    synonym: Vec<[String; 3]>,
}

#[test]
fn error_taxonomy_on_fixture() {
    let case: ErrorCase =
        serde_json::from_str(&std::fs::read_to_string(fixture_path("error_cases.json")).unwrap()).unwrap();
    let report = classify_errors(&case.predicted, &case.gold, Some(&case.turns));
    let of_kind = |k: ErrorKind| -> Vec<[String; 3]> {
        report
            .samples
            .iter()
            .filter(|s| s.kind == k)
            .map(|s| [s.domain.clone(), s.slot.clone(), s.predicted.clone().unwrap()])
            .collect()
    };
    assert_eq!(of_kind(ErrorKind::NonexistentValue), case.expected.nonexistent_value);
    assert_eq!(of_kind(ErrorKind::Synonym), case.expected.synonym);
    assert_eq!(report.nonexistent_value_count, 1);
    assert_eq!(report.synonym_count, 1);
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}( [a-z0-9]{1,5})?"
}

fn state() -> impl Strategy<Value = DialogueState> {
    prop::collection::vec((word(), word(), word()), 0..6).prop_map(|ts| {
        ts.iter().map(|(d, s, v)| StateTriple::new(d, s, v).unwrap()).collect()
    })
}

proptest! {
    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_state(&text);
    }

    #[test]
    fn parser_never_panics_on_near_misses(a in "[\\[\\]',: a-zA-Z]{0,60}") {
        let _ = parse_state(&format!("Domain : [{a}] Slot : [{a}] Value : [{a}"));
    }

    #[test]
    fn format_then_parse_round_trips(s in state()) {
        let text = format_state(&s);
        let back: DialogueState = parse_state(&text).triples().into_iter().collect();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn normalize_is_idempotent(d in "\\PC{1,12}", sl in "\\PC{1,12}", v in "\\PC{0,12}") {
        let t = StateTriple { domain: d, slot: sl, value: v };
        let once = normalize_triple(&t);
        prop_assert_eq!(normalize_triple(&once), once);
    }

    #[test]
    fn error_counts_never_exceed_wrong_values(pred in state(), gold in state()) {
        let report = classify_errors(&pred, &gold, None);
        let wrong = pred.triples().filter(|t| !gold.contains(t)).count();
        prop_assert!(report.nonexistent_value_count + report.synonym_count <= wrong);
        prop_assert!(report.total_errors >= wrong);
    }
}

use proptest::prelude::*;
use statelink::dataset_io::{fixture_path, load_dialogues, CorpusFormat};
use statelink::prompt_engine::{build_prompt, denylist_hits, load_exemplars, Exemplar, PromptSpec, PromptStrategy};

// the persona sentences, spelled out independently of the library constants
const PERSONAS: [(PromptStrategy, &str); 3] = [
    (
        PromptStrategy::CotPersona1,
        "You are an advanced dialogue state tracker with expertise in understanding and managing complex conversations to maintain context and provide accurate responses.",
    ),
    (
        PromptStrategy::CotPersona2,
        "You are a context-aware dialogue specialist, skilled in recognizing user intents and maintaining seamless conversation flow by accurately tracking dialogue states.",
    ),
    (
        PromptStrategy::CotPersona3,
        "You are an expert conversational analyst, proficient in monitoring and updating dialogue states to ensure coherent and contextually appropriate interactions.",
    ),
];
const CLAUSE: &str = "If the value does not exist, return the value as NONE.";
const INPUT: &str = "USER: I need a cheap place to stay in the east.";

#[test]
fn persona_prompts_carry_the_exact_persona_sentence() {
    for (strategy, persona) in PERSONAS {
        let prompt = build_prompt(&PromptSpec::new(strategy, INPUT)).unwrap();
        assert!(prompt.starts_with(persona), "{strategy:?}: {prompt}");
        for (other, text) in PERSONAS {
            if other != strategy {
                assert!(!prompt.contains(text));
            }
        }
    }
    let plain = build_prompt(&PromptSpec::new(PromptStrategy::Cot, INPUT)).unwrap();
    assert!(PERSONAS.iter().all(|(_, p)| !plain.contains(p)));
}

#[test]
fn anti_hallucination_clause_appears_iff_flag_set() {
    for strategy in PromptStrategy::ALL {
        for flag in [false, true] {
            let mut spec = PromptSpec::new(strategy, INPUT);
            spec.anti_hallucination = flag;
            let prompt = build_prompt(&spec).unwrap();
            assert_eq!(prompt.matches(CLAUSE).count(), flag as usize, "{strategy:?}, flag {flag}");
        }
    }
}

#[test]
fn no_prompt_over_the_fixture_corpus_names_ontology_terms() {
    let denylist: Vec<String> = std::fs::read_to_string(fixture_path("ontology_denylist.txt"))
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect();
    assert!(!denylist.is_empty());
    let exemplars = load_exemplars(&fixture_path("exemplars.jsonl")).unwrap();
    let corpus = load_dialogues(&fixture_path("corpus.jsonl"), CorpusFormat::PlainJsonl).unwrap();

    let mut rendered = 0;
    for d in &corpus.dialogues {
        for k in 0..d.user_turn_count() {
            let input = d.context_through_user_turn(k).serialize();
            for strategy in PromptStrategy::ALL {
                for shots in [0, 2, 3] {
                    let mut spec = PromptSpec::new(strategy, input.clone());
                    spec.exemplars = exemplars[..shots].to_vec();
                    let prompt = build_prompt(&spec).unwrap();
                    let hits = denylist_hits(&prompt, &denylist);
                    assert!(hits.is_empty(), "{} turn {k} {strategy:?}: {hits:?}", d.dialogue_id);
                    rendered += 1;
                }
            }
        }
    }
    assert!(rendered > 500);
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.?']{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn live_input_follows_exemplars_and_ends_the_prompt(
        input in text(),
        exemplars in prop::collection::vec((text(), text()), 0..4),
        which in 0usize..6,
        flag in any::<bool>(),
    ) {
        let mut spec = PromptSpec::new(PromptStrategy::ALL[which], input.clone());
        spec.anti_hallucination = flag;
        spec.exemplars = exemplars.iter().map(|(i, o)| Exemplar { input: i.clone(), output: o.clone() }).collect();
        let a = build_prompt(&spec).unwrap();
        prop_assert_eq!(&a, &build_prompt(&spec.clone()).unwrap());

        let tail = format!("Input: {input} Response:");
        prop_assert!(a.ends_with(&tail));
        let live = a.len() - tail.len();
        for (k, ex) in spec.exemplars.iter().enumerate() {
            let block = format!("Example {}: Input: {} Response: {}", k + 1, ex.input, ex.output);
            let at = a.find(&block);
            prop_assert!(at.is_some_and(|at| at + block.len() <= live));
        }
    }
}

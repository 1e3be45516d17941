//! Brute-force reference implementations and random generators shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use statelink::metrics::TurnPair;
use statelink::state_graph::StateGraph;
use statelink::{DialogueState, StateTriple};

type Key = (String, String, String);

const DOMAINS: &[&str] = &["hotel", "train", "taxi"];
const SLOTS: &[&str] = &["area", "day", "people", "name"];
const VALUES: &[&str] = &["east", "north", "monday", "2", "3", "none"];

/// A state of at most `max` triples over a small vocabulary so that
/// predictions and gold overlap often.
pub fn random_state<R: Rng>(rng: &mut R, max: usize) -> DialogueState {
    let n = rng.random_range(0..=max);
    let mut s = DialogueState::new();
    for _ in 0..n {
        let t = StateTriple::new(
            DOMAINS.choose(rng).unwrap(),
            SLOTS.choose(rng).unwrap(),
            VALUES.choose(rng).unwrap(),
        )
        .unwrap();
        s.insert(t);
    }
    s
}

/// Gold and a prediction that copies, drops and corrupts some gold triples.
pub fn random_turn<R: Rng>(rng: &mut R) -> TurnPair {
    let gold = random_state(rng, 10);
    let mut pred = DialogueState::new();
    for t in gold.triples() {
        match rng.random_range(0..4) {
            0 => {}
            1 => {
                let v = VALUES.choose(rng).unwrap();
                pred.insert(StateTriple::new(&t.domain, &t.slot, v).unwrap());
            }
            _ => {
                pred.insert(t);
            }
        }
    }
    for t in random_state(rng, 3).triples() {
        if pred.len() < 10 {
            pred.insert(t);
        }
    }
    TurnPair::new(pred, gold)
}

pub fn random_turns<R: Rng>(rng: &mut R) -> Vec<TurnPair> {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| random_turn(rng)).collect()
}

fn keys(s: &DialogueState) -> HashSet<Key> {
    s.triples()
        .filter(|t| t.value != "none")
        .map(|t| (t.domain, t.slot, t.value))
        .collect()
}

pub fn ref_jga(turns: &[TurnPair]) -> f64 {
    let exact = turns.iter().filter(|t| keys(&t.predicted) == keys(&t.gold)).count();
    exact as f64 / turns.len() as f64
}

/// Micro F1 from explicit set intersections; `None` when both sides are empty
/// everywhere (the implementation reports 1.0 there).
pub fn ref_slot_f1(turns: &[TurnPair]) -> f64 {
    let (mut inter, mut npred, mut ngold) = (0usize, 0usize, 0usize);
    for t in turns {
        let p = keys(&t.predicted);
        let g = keys(&t.gold);
        inter += p.intersection(&g).count();
        npred += p.len();
        ngold += g.len();
    }
    if npred == 0 && ngold == 0 {
        return 1.0;
    }
    let precision = if npred == 0 { 0.0 } else { inter as f64 / npred as f64 };
    let recall = if ngold == 0 { 0.0 } else { inter as f64 / ngold as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fraction of gold triples reproduced; `None` without any gold triple.
pub fn ref_slot_accuracy(turns: &[TurnPair]) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for t in turns {
        let p = keys(&t.predicted);
        for g in keys(&t.gold) {
            total += 1;
            hit += p.contains(&g) as usize;
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// AUC by counting every positive/negative pair, ties worth one half.
pub fn ref_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_wins = 0u64;
    let (mut np, mut nn) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            nn += 1;
            continue;
        }
        np += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                }
            }
        }
    }
    (twice_wins as f64 / 2.0) / (np * nn) as f64
}

/// AP by walking ranks: an item's rank counts every strictly higher score and
/// every equal score that comes earlier in the input.
pub fn ref_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let rank = |i: usize| {
        1 + (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut ranked: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).map(rank).collect();
    ranked.sort_unstable();
    let mut sum = 0.0;
    for (hits, r) in ranked.iter().enumerate() {
        sum += (hits + 1) as f64 / *r as f64;
    }
    sum / ranked.len() as f64
}

/// Scores with frequent ties and labels with both classes present.
pub fn random_scored<R: Rng>(rng: &mut R, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(2..=n.max(2) * 2);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64 + 0.001)
        .collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    labels.shuffle(rng);
    (scores, labels)
}

/// Random bipartite graph with enough edges and non-edges to split.
pub fn random_graph<R: Rng>(rng: &mut R) -> StateGraph {
    loop {
        let d = rng.random_range(2..=6);
        let v = rng.random_range(4..=30);
        let p = rng.random_range(0.15..0.6);
        let mut g = StateGraph::new();
        let ds: Vec<usize> = (0..d).map(|i| g.add_domain(&format!("d{i}"))).collect();
        let vs: Vec<usize> = (0..v).map(|i| g.add_slot_value("s", &format!("v{i}"))).collect();
        for &a in &ds {
            for &b in &vs {
                if rng.random_bool(p) {
                    g.add_edge(a, b);
                }
            }
        }
        let e = g.edges().len();
        if e >= 20 && d * v - e >= e {
            return g;
        }
    }
}

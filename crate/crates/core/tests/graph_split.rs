mod oracles;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statelink::state_graph::{split_edges, Edge, NodeKind, StateGraph};
use statelink::{DialogueState, StateTriple};

use oracles::{random_graph, random_state};

fn within_one(actual: usize, total: usize, frac: f64) -> bool {
    (actual as f64 - total as f64 * frac).abs() <= 1.0
}

#[test]
fn split_arithmetic_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..200u64 {
        let g = random_graph(&mut rng);
        let s = split_edges(&g, 0.85, 0.10, 0.05, case).unwrap();
        let total = g.edges().len();

        assert!(s.train.is_disjoint(&s.val) && s.train.is_disjoint(&s.test) && s.val.is_disjoint(&s.test));
        let union: BTreeSet<Edge> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(&union, g.edges(), "case {case}: split must cover every edge");

        assert!(within_one(s.train.len(), total, 0.85), "case {case}: train {} of {total}", s.train.len());
        assert!(within_one(s.test.len(), total, 0.10), "case {case}: test {} of {total}", s.test.len());
        assert!(within_one(s.val.len(), total, 0.05), "case {case}: val {} of {total}", s.val.len());

        assert_eq!(s.neg_val.len(), s.val.len());
        assert_eq!(s.neg_test.len(), s.test.len());
        assert!(s.neg_val.is_disjoint(&s.neg_test));
        for e in s.neg_val.iter().chain(&s.neg_test) {
            assert!(!g.edges().contains(e), "case {case}: negative {e:?} is a true edge");
            assert_ne!(g.node(e.0).kind, g.node(e.1).kind);
        }
    }
}

/// Edges as label pairs, which do not depend on node numbering.
fn labelled_edges(g: &StateGraph) -> BTreeSet<(String, String)> {
    g.edges()
        .iter()
        .map(|e| {
            let (a, b) = (g.node(e.0), g.node(e.1));
            let (d, v) = if a.kind == NodeKind::Domain { (a, b) } else { (b, a) };
            (d.label.clone(), v.label.clone())
        })
        .collect()
}

fn states_strategy() -> impl Strategy<Value = Vec<DialogueState>> {
    (any::<u64>(), 1usize..12).prop_map(|(seed, n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_state(&mut rng, 6)).collect()
    })
}

proptest! {
    #[test]
    fn graphs_are_bipartite(states in states_strategy()) {
        let g = StateGraph::build(&states);
        for e in g.edges() {
            prop_assert_ne!(g.node(e.0).kind, g.node(e.1).kind);
        }
    }

    #[test]
    fn build_ignores_state_order(states in states_strategy(), seed in any::<u64>()) {
        let mut shuffled = states.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (StateGraph::build(&states), StateGraph::build(&shuffled));
        prop_assert_eq!(a.node_count(), b.node_count());
        prop_assert_eq!(labelled_edges(&a), labelled_edges(&b));
    }
}

#[test]
fn none_values_never_become_nodes() {
    let s: DialogueState = [StateTriple::new("hotel", "area", "none").unwrap(), StateTriple::new("hotel", "stars", "4").unwrap()]
        .into_iter()
        .collect();
    let g = StateGraph::build([&s]);
    assert_eq!(g.edges().len(), 1);
    assert!(g.slot_value_index("area", "none").is_none());
}

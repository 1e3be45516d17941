mod oracles;

use std::collections::BTreeSet;
use std::time::Instant;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statelink::link_eval::{auc, average_precision, rank_candidates, rank_with_embeddings};
use statelink::state_graph::{planted_graph, split_edges};
use statelink::vgae::{train, Matrix, TrainConfig};

use oracles::*;

#[test]
fn auc_and_ap_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    for case in 0..500 {
        let (s, l) = random_scored(&mut rng, 50);
        assert_eq!(auc(&s, &l).unwrap(), ref_auc(&s, &l), "auc, case {case}");
        assert_eq!(average_precision(&s, &l).unwrap(), ref_ap(&s, &l), "ap, case {case}");
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

fn distinct_scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, labels) = random_scored(&mut rng, n.max(2));
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut rng);
        let scores = idx.iter().map(|&i| i as f64 * 0.37 - 3.0).collect();
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn auc_ignores_strictly_increasing_transforms((s, l) in distinct_scored()) {
        let t: Vec<f64> = s.iter().map(|x| (x * 0.5).exp() + 3.0 * x).collect();
        prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
    }

    #[test]
    fn auc_of_flipped_labels_is_the_complement((s, l) in distinct_scored()) {
        let flipped: Vec<bool> = l.iter().map(|b| !b).collect();
        let sum = auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12, "{}", sum);
    }
}

#[test]
fn ranked_candidates_are_sorted_non_edges() {
    let g = planted_graph(3, 8, 0.7, 0.1, 5);
    let split = split_edges(&g, 0.85, 0.10, 0.05, 5).unwrap();
    let config = TrainConfig { epochs: 40, ..Default::default() };
    let (params, _) = train(&g, &split, &config).unwrap();
    for d in 0..3 {
        let ctx: BTreeSet<usize> = [g.domain_index(&format!("domain{d}")).unwrap()].into();
        let ranked = rank_candidates(&params, &g, &ctx, 1000).unwrap();
        let non_edges = g.nodes().iter().filter(|n| n.index >= 3 && !g.has_edge(d, n.index)).count();
        assert_eq!(ranked.len(), non_edges, "no padding, no truncation below top_k");
        for w in ranked.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for c in &ranked {
            assert!(!g.has_edge(c.domain, c.slot_value));
        }
    }
}

#[test]
fn equal_scores_rank_by_node_index() {
    let g = planted_graph(2, 6, 0.5, 0.1, 3);
    let z = Matrix::zeros(g.node_count(), 4);
    let ctx: BTreeSet<usize> = [0].into();
    let ranked = rank_with_embeddings(&z, &g, &ctx, 100);
    let order: Vec<usize> = ranked.iter().map(|c| c.slot_value).collect();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(order, sorted);
    assert!(ranked.iter().all(|c| c.score == 0.5));
}

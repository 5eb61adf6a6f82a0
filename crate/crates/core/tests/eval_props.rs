mod common;

use proptest::prelude::*;
use puda::eval::{evaluate_triples, rank_one, Filtering, QuerySides};
use puda::scoring::EmbeddingTable;
use puda::{evaluate, KnowledgeGraph, ModelParams, ScoringKind, Side, Split, Triple};

/// Small-integer embeddings: every score is exact, so ties are real ties.
fn integer_params(g: &KnowledgeGraph, dim: usize, kind: ScoringKind, values: &[i8]) -> ModelParams {
    let mut it = values.iter().cycle().map(|&v| f64::from(v % 3));
    let mut table =
        |rows: usize| EmbeddingTable::from_vec(rows, dim, (0..rows * dim).map(|_| it.next().unwrap()).collect());
    let entities = table(g.entity_count());
    let relations = table(g.relation_count());
    ModelParams {
        kind,
        entities,
        relations,
    }
}

/// Sorts every candidate by score and reads off the expected rank.
fn brute_force_rank(p: &ModelParams, g: &KnowledgeGraph, q: &Triple, side: Side, filtered: bool) -> f64 {
    let target = q.entity(side);
    let mut scored: Vec<(f64, usize)> = (0..g.entity_count())
        .filter(|&e| e == target || !(filtered && g.is_known(&q.with_entity(side, e))))
        .map(|e| (p.score_triple(&q.with_entity(side, e)), e))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s = p.score_triple(q);
    let first = scored.iter().position(|&(x, _)| x == s).unwrap();
    let last = scored.iter().rposition(|&(x, _)| x == s).unwrap();
    // Positions first..=last share the score; the target sits at their mean.
    1.0 + (first + last) as f64 / 2.0
}

fn arb_case() -> impl Strategy<Value = (KnowledgeGraph, ModelParams)> {
    (
        common::arb_graph(),
        1usize..4,
        any::<bool>(),
        prop::collection::vec(any::<i8>(), 1..64),
    )
        .prop_map(|(g, d, transe, vals)| {
            let kind = if transe {
                ScoringKind::TransE
            } else {
                ScoringKind::DistMult
            };
            let p = integer_params(&g, d, kind, &vals);
            (g, p)
        })
}

proptest! {
    #[test]
    fn matches_brute_force_ranker((g, p) in arb_case()) {
        let all: Vec<Triple> = common::union(&g).into_iter().collect();
        for t in &all {
            for side in Side::BOTH {
                for (filtering, filtered) in [(Filtering::Filtered, true), (Filtering::Raw, false)] {
                    let got = rank_one(&p, t, side, &g, filtering);
                    let want = brute_force_rank(&p, &g, t, side, filtered);
                    prop_assert_eq!(got, want, "{:?} {:?} {:?}", t, side, filtering);
                }
            }
        }
        let report = evaluate_triples(&p, &g, &all, QuerySides::Both, true).unwrap();
        let ranks: Vec<f64> = all
            .iter()
            .flat_map(|t| Side::BOTH.map(|s| brute_force_rank(&p, &g, t, s, true)))
            .collect();
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64;
        prop_assert!((report.mrr - mrr).abs() < 1e-15);
        for k in [1usize, 3, 10] {
            let hits = ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64;
            prop_assert_eq!(report.hits(k), hits);
        }
    }

    #[test]
    fn filtering_never_hurts((g, p) in arb_case()) {
        for t in g.train().iter().chain(g.test()) {
            for side in Side::BOTH {
                prop_assert!(rank_one(&p, t, side, &g, Filtering::Filtered) <= rank_one(&p, t, side, &g, Filtering::Raw));
            }
        }
    }

    #[test]
    fn increasing_score_maps_keep_ranks((g, p) in arb_case(), shift in 0usize..4) {
        // Scaling every embedding by a power of two multiplies DistMult scores
        // by its cube and TransE scores by itself: exact, strictly increasing.
        let c = (1u32 << shift) as f64;
        let mut q = p.clone();
        q.entities.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        q.relations.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        for t in g.train() {
            for side in Side::BOTH {
                prop_assert_eq!(
                    rank_one(&p, t, side, &g, Filtering::Filtered),
                    rank_one(&q, t, side, &g, Filtering::Filtered)
                );
            }
        }
    }

    #[test]
    fn report_fractions_are_ordered((g, p) in arb_case()) {
        let r = evaluate_triples(&p, &g, g.train(), QuerySides::Both, false).unwrap();
        prop_assert!(r.hits(1) <= r.hits(3) && r.hits(3) <= r.hits(10) && r.hits(10) <= 1.0);
        prop_assert!(r.mrr >= r.hits(1) && r.mrr > 0.0 && r.mrr <= 1.0);
    }
}

#[test]
fn oracle_embeddings_rank_every_fact_first() {
    // Entities on a line at their id, relation r translates by r + 1: TransE
    // scores a true triple 0 and every other candidate below 0.
    let (ne, nr) = (12, 2);
    let facts: Vec<Triple> = (0..ne)
        .flat_map(|h| (0..nr).map(move |r| Triple::new(h, r, h + 1 + r)))
        .filter(|t| t.tail < ne)
        .collect();
    let test: Vec<Triple> = facts.iter().step_by(3).copied().collect();
    let train: Vec<Triple> = facts.iter().filter(|t| !test.contains(t)).copied().collect();
    let g = KnowledgeGraph::from_ids(ne, nr, train, vec![], test).unwrap();
    let entities = EmbeddingTable::from_vec(ne, 1, (0..ne).map(|e| e as f64).collect());
    let relations = EmbeddingTable::from_vec(nr, 1, vec![1.0, 2.0]);
    let p = ModelParams {
        kind: ScoringKind::TransE,
        entities,
        relations,
    };
    let r = evaluate(&p, &g, Split::Test).unwrap();
    assert_eq!(r.mrr, 1.0);
    assert_eq!(r.hits(1), 1.0);
    assert!(evaluate(&p, &g, Split::Valid).is_err(), "empty split");
}

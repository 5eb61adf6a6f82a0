mod common;

use proptest::prelude::*;
use puda::kg::DatasetPaths;
use puda::{KnowledgeGraph, Side, Triple};

proptest! {
    #[test]
    fn filter_index_matches_split_union(g in common::arb_graph()) {
        let all = common::union(&g);
        for h in 0..g.entity_count() {
            for r in 0..g.relation_count() {
                let tails: Vec<usize> = all.iter().filter(|t| t.head == h && t.relation == r).map(|t| t.tail).collect();
                prop_assert_eq!(g.known_tails(h, r), tails.as_slice());
                let heads: Vec<usize> = {
                    let mut v: Vec<usize> = all.iter().filter(|t| t.relation == r && t.tail == h).map(|t| t.head).collect();
                    v.sort_unstable();
                    v
                };
                prop_assert_eq!(g.known_heads(r, h), heads.as_slice());
                for t in 0..g.entity_count() {
                    let triple = Triple::new(h, r, t);
                    prop_assert_eq!(g.is_known(&triple), all.contains(&triple));
                }
            }
        }
    }

    #[test]
    fn known_fillers_agree_with_side_maps(g in common::arb_graph()) {
        for t in g.train() {
            prop_assert_eq!(g.known_fillers(t, Side::Tail), g.known_tails(t.head, t.relation));
            prop_assert_eq!(g.known_fillers(t, Side::Head), g.known_heads(t.relation, t.tail));
        }
    }

    #[test]
    fn write_and_reload_keeps_ids(g in common::arb_graph()) {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        g.write_dir(&a).unwrap();
        let (loaded, _) = KnowledgeGraph::load(&DatasetPaths::in_dir(&a)).unwrap();
        loaded.write_dir(&b).unwrap();
        let (again, report) = KnowledgeGraph::load(&DatasetPaths::in_dir(&b)).unwrap();
        prop_assert_eq!(loaded.entities(), again.entities());
        prop_assert_eq!(loaded.relations(), again.relations());
        prop_assert_eq!(loaded.train(), again.train());
        prop_assert_eq!(loaded.valid(), again.valid());
        prop_assert_eq!(loaded.test(), again.test());
        prop_assert_eq!(report.train + report.valid + report.test, common::union(&g).len());
    }
}

#[test]
fn cold_start_entities_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.txt"), "a\tr\tb\nb\tr\tc\n").unwrap();
    std::fs::write(dir.path().join("valid.txt"), "a\tr\tz\n").unwrap();
    std::fs::write(dir.path().join("test.txt"), "c\ts\ta\n").unwrap();
    let (g, report) = KnowledgeGraph::load(&DatasetPaths::in_dir(dir.path())).unwrap();
    assert_eq!((report.entity_count, report.relation_count), (4, 2));
    assert_eq!((report.cold_start_entities, report.cold_start_relations), (1, 1));
    assert_eq!(g.entities().id("z"), Some(3));
    assert!(
        g.is_known(&Triple::new(0, 0, 3)),
        "valid triples are part of the filter"
    );
}

//! Shared generators for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use puda::{KnowledgeGraph, Triple};

/// Distinct triples over `entities` x `relations`, split 3 ways by `assign`.
pub fn graph_from(entities: usize, relations: usize, facts: &[(usize, usize, usize, u8)]) -> KnowledgeGraph {
    let mut seen = BTreeSet::new();
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for &(h, r, t, split) in facts {
        let triple = Triple::new(h % entities, r % relations, t % entities);
        if !seen.insert(triple) {
            continue;
        }
        match split % 4 {
            0 | 1 => train.push(triple),
            2 => valid.push(triple),
            _ => test.push(triple),
        }
    }
    if train.is_empty() {
        if let Some(t) = valid.pop().or_else(|| test.pop()) {
            train.push(t);
        } else {
            train.push(Triple::new(0, 0, entities - 1));
        }
    }
    KnowledgeGraph::from_ids(entities, relations, train, valid, test).expect("valid graph")
}

/// Small random graphs with all three splits possibly populated.
pub fn arb_graph() -> impl Strategy<Value = KnowledgeGraph> {
    (2usize..12, 1usize..4).prop_flat_map(|(e, r)| {
        prop::collection::vec((0..e, 0..r, 0..e, any::<u8>()), 1..40).prop_map(move |facts| graph_from(e, r, &facts))
    })
}

/// Every triple of every split.
pub fn union(g: &KnowledgeGraph) -> BTreeSet<Triple> {
    g.train().iter().chain(g.valid()).chain(g.test()).copied().collect()
}

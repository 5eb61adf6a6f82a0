//! Planted-pattern knowledge graphs for desk-scale experiments.
//!
//! Entities fall into latent groups. Each of two base relations maps an entity
//! of group `g` to a few entities of group `g + offset`; a third relation is
//! their composition, linking `g` to `g + offset_0 + offset_1`. A share of all facts is held out as the test split and left
//! out of the training view, so uniform corruptions of training facts
//! regularly hit true but unobserved triples.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::kg::{KgError, KnowledgeGraph, Triple};
use crate::sampler::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub entities: usize,
    pub groups: usize,
    /// Group offsets of the two base relations.
    pub offsets: [usize; 2],
    /// Partners per entity for each base relation.
    pub base_degree: usize,
    /// Shares of all facts routed to validation and to the held-out test split.
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            entities: 300,
            groups: 5,
            offsets: [1, 2],
            base_degree: 10,
            valid_fraction: 0.1,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

/// The complete graph, used for filtered evaluation, and the training view
/// that lacks the test split.
#[derive(Debug, Clone)]
pub struct PlantedKg {
    pub graph: KnowledgeGraph,
    pub training: KnowledgeGraph,
}

pub const COMPOSE_FIRST: usize = 0;
pub const COMPOSE_SECOND: usize = 1;
pub const COMPOSITE: usize = 2;

fn partner(group: usize, offset: usize, groups: usize) -> usize {
    (group + offset) % groups
}

pub fn planted_kg(spec: &PlantedSpec) -> Result<PlantedKg, KgError> {
    assert!(
        spec.groups >= 2 && spec.entities >= spec.groups,
        "need at least two non-empty groups"
    );
    let per_group = spec.entities / spec.groups;
    assert!(spec.base_degree <= per_group, "base degree exceeds group size");
    let mut rng = seeded_rng(spec.seed, 0);

    let members: Vec<Vec<usize>> = (0..spec.groups)
        .map(|g| (0..spec.entities).filter(|e| e % spec.groups == g).collect())
        .collect();
    let group_of = |e: usize| e % spec.groups;
    let mut base: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    for (links, &offset) in base.iter_mut().zip(&spec.offsets) {
        *links = (0..spec.entities)
            .map(|x| {
                let pool = &members[partner(group_of(x), offset, spec.groups)];
                let mut picks: Vec<usize> = pool.choose_multiple(&mut rng, spec.base_degree).copied().collect();
                picks.sort_unstable();
                picks
            })
            .collect();
    }

    let mut facts = Vec::new();
    for (r, links) in base.iter().enumerate() {
        for (x, tails) in links.iter().enumerate() {
            facts.extend(tails.iter().map(|&y| Triple::new(x, r, y)));
        }
    }

    for x in 0..spec.entities {
        let mut tails: Vec<usize> = base[COMPOSE_FIRST][x]
            .iter()
            .flat_map(|&y| base[COMPOSE_SECOND][y].iter().copied())
            .collect();
        tails.sort_unstable();
        tails.dedup();
        facts.extend(tails.into_iter().map(|z| Triple::new(x, COMPOSITE, z)));
    }

    facts.shuffle(&mut rng);
    let n = facts.len();
    let n_valid = (spec.valid_fraction * n as f64).round() as usize;
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let test = facts.split_off(n - n_test);
    let valid = facts.split_off(n - n_test - n_valid);
    let training = KnowledgeGraph::from_ids(spec.entities, 3, facts.clone(), valid.clone(), vec![])?;
    let graph = KnowledgeGraph::from_ids(spec.entities, 3, facts, valid, test)?;
    Ok(PlantedKg { graph, training })
}

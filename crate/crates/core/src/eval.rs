//! Filtered link-prediction evaluation: MRR and Hits@K over head and tail queries.
//!
//! Ties are resolved by expected rank: `1 + greater + ties / 2`.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Side, Split, Triple};
use crate::scoring::{ModelParams, ScoringKind};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("model has |E|={model_entities}, |R|={model_relations} but graph has |E|={graph_entities}, |R|={graph_relations}")]
    DimensionMismatch {
        model_entities: usize,
        model_relations: usize,
        graph_entities: usize,
        graph_relations: usize,
    },
    #[error("no triples to evaluate")]
    EmptySplit,
}

/// Which query directions contributed to a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySides {
    Head,
    Tail,
    Both,
}

impl QuerySides {
    fn sides(&self) -> &'static [Side] {
        match self {
            QuerySides::Head => &[Side::Head],
            QuerySides::Tail => &[Side::Tail],
            QuerySides::Both => &Side::BOTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filtering {
    /// Drop candidates forming a known triple other than the query itself.
    Filtered,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    /// Fraction of queries with rank <= K.
    pub hits_at: BTreeMap<usize, f64>,
    pub queries: usize,
    pub sides: QuerySides,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<f64>>,
}

impl EvalReport {
    /// Aggregates ranks into MRR and Hits@{1,3,10}.
    pub fn from_ranks(ranks: Vec<f64>, sides: QuerySides, keep_ranks: bool) -> Self {
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let hits_at = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n))
            .collect();
        EvalReport {
            mrr,
            hits_at,
            queries: ranks.len(),
            sides,
            ranks: keep_ranks.then_some(ranks),
        }
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// Aligned plain-text table with a header row.
    pub fn table(&self, label: &str) -> String {
        format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}\n{:<10} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            "split",
            "queries",
            "MRR",
            "H@1",
            "H@3",
            "H@10",
            label,
            self.queries,
            self.mrr,
            self.hits(1),
            self.hits(3),
            self.hits(10)
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4}  ({} queries)",
            self.mrr,
            self.hits(1),
            self.hits(3),
            self.hits(10),
            self.queries
        )
    }
}

/// Precomputed query context so each candidate costs one O(d) pass.
struct Query<'a> {
    kind: ScoringKind,
    side: Side,
    /// DistMult: `h ∘ r` or `r ∘ t`. TransE: `h + r` (tail side) or `t - r` (head side).
    fixed: Vec<f64>,
    params: &'a ModelParams,
}

impl<'a> Query<'a> {
    fn new(params: &'a ModelParams, t: &Triple, side: Side) -> Self {
        let r = params.relations.row(t.relation);
        let fixed: Vec<f64> = match (params.kind, side) {
            (ScoringKind::DistMult, Side::Tail) => {
                let h = params.entities.row(t.head);
                h.iter().zip(r).map(|(a, b)| a * b).collect()
            }
            (ScoringKind::DistMult, Side::Head) => {
                let tail = params.entities.row(t.tail);
                r.iter().zip(tail).map(|(a, b)| a * b).collect()
            }
            (ScoringKind::TransE, Side::Tail) => {
                let h = params.entities.row(t.head);
                h.iter().zip(r).map(|(a, b)| a + b).collect()
            }
            (ScoringKind::TransE, Side::Head) => {
                let tail = params.entities.row(t.tail);
                tail.iter().zip(r).map(|(a, b)| a - b).collect()
            }
        };
        Query {
            kind: params.kind,
            side,
            fixed,
            params,
        }
    }

    fn score(&self, candidate: usize) -> f64 {
        let e = self.params.entities.row(candidate);
        match self.kind {
            ScoringKind::DistMult => self.fixed.iter().zip(e).map(|(a, b)| a * b).sum(),
            // tail side: -||(h+r) - t||; head side: -||h - (t-r)||
            ScoringKind::TransE => -self
                .fixed
                .iter()
                .zip(e)
                .map(|(a, b)| {
                    let d = match self.side {
                        Side::Tail => a - b,
                        Side::Head => b - a,
                    };
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Expected rank of the true entity of `query` on `side` among all entities.
pub fn rank_one(params: &ModelParams, query: &Triple, side: Side, g: &KnowledgeGraph, filtering: Filtering) -> f64 {
    let q = Query::new(params, query, side);
    let target_entity = query.entity(side);
    let target = q.score(target_entity);
    let known: &[usize] = match filtering {
        Filtering::Filtered => g.known_fillers(query, side),
        Filtering::Raw => &[],
    };
    let mut k = 0;
    let (mut greater, mut ties) = (0usize, 0usize);
    for e in 0..params.entity_count() {
        while k < known.len() && known[k] < e {
            k += 1;
        }
        if e == target_entity || (k < known.len() && known[k] == e) {
            continue;
        }
        let s = q.score(e);
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1.0 + greater as f64 + ties as f64 / 2.0
}

/// Ranks of `triples` in query order: for each triple its head query (when
/// requested) followed by its tail query.
pub fn rank_all(
    params: &ModelParams,
    g: &KnowledgeGraph,
    triples: &[Triple],
    sides: QuerySides,
    filtering: Filtering,
) -> Vec<f64> {
    let per_triple: Vec<Vec<f64>> = triples
        .par_iter()
        .map(|t| {
            sides
                .sides()
                .iter()
                .map(|&side| rank_one(params, t, side, g, filtering))
                .collect()
        })
        .collect();
    per_triple.into_iter().flatten().collect()
}

fn check_shapes(params: &ModelParams, g: &KnowledgeGraph) -> Result<(), EvalError> {
    if params.entity_count() != g.entity_count() || params.relation_count() != g.relation_count() {
        return Err(EvalError::DimensionMismatch {
            model_entities: params.entity_count(),
            model_relations: params.relation_count(),
            graph_entities: g.entity_count(),
            graph_relations: g.relation_count(),
        });
    }
    Ok(())
}

/// Filtered evaluation of arbitrary triples.
pub fn evaluate_triples(
    params: &ModelParams,
    g: &KnowledgeGraph,
    triples: &[Triple],
    sides: QuerySides,
    keep_ranks: bool,
) -> Result<EvalReport, EvalError> {
    check_shapes(params, g)?;
    if triples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let ranks = rank_all(params, g, triples, sides, Filtering::Filtered);
    Ok(EvalReport::from_ranks(ranks, sides, keep_ranks))
}

/// Filtered evaluation of a split over both query directions.
pub fn evaluate(params: &ModelParams, g: &KnowledgeGraph, split: Split) -> Result<EvalReport, EvalError> {
    evaluate_triples(params, g, g.split(split), QuerySides::Both, false)
}

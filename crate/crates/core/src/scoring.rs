//! Scoring functions and the discriminator's embedding tables.
//!
//! Relations are stored as d-vectors: DistMult uses the diagonal of the
//! relation matrix and TransE uses the translation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringKind {
    /// `sum_k h_k r_k t_k`
    DistMult,
    /// `-||h + r - t||_2`
    TransE,
}

impl ScoringKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoringKind::DistMult => "distmult",
            ScoringKind::TransE => "transe",
        }
    }
}

impl std::str::FromStr for ScoringKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "distmult" => Ok(ScoringKind::DistMult),
            "transe" => Ok(ScoringKind::TransE),
            other => Err(format!("unknown scoring function {other:?}")),
        }
    }
}

/// Dense row-major `rows x dim` table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "table data has wrong length");
        EmbeddingTable { dim, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Score value with its partials w.r.t. the three input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWithGrad {
    pub value: f64,
    pub grad_head: Vec<f64>,
    pub grad_relation: Vec<f64>,
    pub grad_tail: Vec<f64>,
}

/// Scores one triple given its embedding vectors.
pub fn score(kind: ScoringKind, head: &[f64], rel: &[f64], tail: &[f64]) -> f64 {
    debug_assert!(head.len() == rel.len() && rel.len() == tail.len());
    match kind {
        ScoringKind::DistMult => head.iter().zip(rel).zip(tail).map(|((h, r), t)| h * r * t).sum(),
        ScoringKind::TransE => -head
            .iter()
            .zip(rel)
            .zip(tail)
            .map(|((h, r), t)| {
                let diff = h + r - t;
                diff * diff
            })
            .sum::<f64>()
            .sqrt(),
    }
}

/// Adds `coeff * d score / d (head, rel, tail)` into the three gradient buffers.
/// TransE at zero distance contributes the zero subgradient.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_score_grad(
    kind: ScoringKind,
    head: &[f64],
    rel: &[f64],
    tail: &[f64],
    coeff: f64,
    grad_head: &mut [f64],
    grad_rel: &mut [f64],
    grad_tail: &mut [f64],
) {
    let d = head.len();
    match kind {
        ScoringKind::DistMult => {
            for k in 0..d {
                grad_head[k] += coeff * rel[k] * tail[k];
                grad_rel[k] += coeff * head[k] * tail[k];
                grad_tail[k] += coeff * head[k] * rel[k];
            }
        }
        ScoringKind::TransE => {
            let norm = (0..d)
                .map(|k| {
                    let x = head[k] + rel[k] - tail[k];
                    x * x
                })
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return;
            }
            for k in 0..d {
                let g = -(head[k] + rel[k] - tail[k]) / norm * coeff;
                grad_head[k] += g;
                grad_rel[k] += g;
                grad_tail[k] -= g;
            }
        }
    }
}

/// Score and exact analytic gradient.
pub fn score_with_grad(kind: ScoringKind, head: &[f64], rel: &[f64], tail: &[f64]) -> ScoreWithGrad {
    let d = head.len();
    let mut out = ScoreWithGrad {
        value: score(kind, head, rel, tail),
        grad_head: vec![0.0; d],
        grad_relation: vec![0.0; d],
        grad_tail: vec![0.0; d],
    };
    accumulate_score_grad(
        kind,
        head,
        rel,
        tail,
        1.0,
        &mut out.grad_head,
        &mut out.grad_relation,
        &mut out.grad_tail,
    );
    out
}

/// Discriminator parameters: entity and relation embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ScoringKind,
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
}

impl ModelParams {
    /// Uniform initialization in `[-6/sqrt(d), 6/sqrt(d)]`.
    pub fn init<R: Rng + ?Sized>(
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        kind: ScoringKind,
        rng: &mut R,
    ) -> Self {
        assert!(entity_count > 0 && relation_count > 0 && dim > 0);
        let bound = 6.0 / (dim as f64).sqrt();
        let mut fill = |rows: usize| {
            let data = (0..rows * dim).map(|_| rng.random_range(-bound..=bound)).collect();
            EmbeddingTable::from_vec(rows, dim, data)
        };
        let entities = fill(entity_count);
        let relations = fill(relation_count);
        ModelParams {
            kind,
            entities,
            relations,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.dim()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.rows()
    }

    pub fn score_triple(&self, t: &Triple) -> f64 {
        score(
            self.kind,
            self.entities.row(t.head),
            self.relations.row(t.relation),
            self.entities.row(t.tail),
        )
    }

    pub fn score_triple_with_grad(&self, t: &Triple) -> ScoreWithGrad {
        score_with_grad(
            self.kind,
            self.entities.row(t.head),
            self.relations.row(t.relation),
            self.entities.row(t.tail),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }
}

//! Batch-level forward and backward passes: scores a [`PuBatch`] together with
//! its synthetic triples, and chains score gradients from [`crate::risk`] into
//! sparse embedding-row gradients and generator gradients.

use rand::Rng;

use crate::generator::{GenMode, GeneratorGrad, GeneratorParams, Tape};
use crate::kg::{Side, Triple};
use crate::risk::{BatchScores, ScoreGrads};
use crate::sampler::PuBatch;
use crate::scoring::{accumulate_score_grad, score, ModelParams};

/// Contents of one slot of a synthetic triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot<'a> {
    Entity(usize),
    Synthetic(&'a [f64]),
}

/// A positive triple with one entity slot replaced by a generated embedding.
/// The generated entity has no id and never enters the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTriple {
    pub anchor: Triple,
    pub side: Side,
    pub embedding: Vec<f64>,
    pub tape: Option<Tape>,
}

impl SyntheticTriple {
    pub fn relation(&self) -> usize {
        self.anchor.relation
    }

    pub fn slot(&self, side: Side) -> Slot<'_> {
        if side == self.side {
            Slot::Synthetic(&self.embedding)
        } else {
            Slot::Entity(self.anchor.entity(side))
        }
    }
}

/// Runs the generator on every noise vector of the batch. Tapes are kept
/// only when `keep_tapes` is set (the generator step needs them).
pub fn synthesize<R: Rng + ?Sized>(
    gen: &GeneratorParams,
    batch: &PuBatch,
    noise: &[Vec<Vec<f64>>],
    mode: GenMode,
    keep_tapes: bool,
    rng: &mut R,
) -> Vec<Vec<SyntheticTriple>> {
    assert_eq!(noise.len(), batch.len());
    batch
        .examples
        .iter()
        .zip(noise)
        .map(|(ex, zs)| {
            zs.iter()
                .map(|z| {
                    let (embedding, tape) = gen.generate(z, mode, rng);
                    SyntheticTriple {
                        anchor: ex.positive,
                        side: ex.side,
                        embedding,
                        tape: keep_tapes.then_some(tape),
                    }
                })
                .collect()
        })
        .collect()
}

fn synthetic_vectors<'a>(params: &'a ModelParams, s: &'a SyntheticTriple) -> (&'a [f64], &'a [f64], &'a [f64]) {
    let rel = params.relations.row(s.relation());
    match s.side {
        Side::Tail => (params.entities.row(s.anchor.head), rel, &s.embedding),
        Side::Head => (&s.embedding, rel, params.entities.row(s.anchor.tail)),
    }
}

pub fn score_synthetic(params: &ModelParams, s: &SyntheticTriple) -> f64 {
    let (h, r, t) = synthetic_vectors(params, s);
    score(params.kind, h, r, t)
}

/// Scores every positive, unlabeled and synthetic triple of the batch.
pub fn batch_scores(params: &ModelParams, batch: &PuBatch, synthetic: &[Vec<SyntheticTriple>]) -> BatchScores {
    BatchScores {
        positive: batch
            .examples
            .iter()
            .map(|ex| params.score_triple(&ex.positive))
            .collect(),
        unlabeled: batch
            .examples
            .iter()
            .map(|ex| ex.unlabeled.iter().map(|u| params.score_triple(u)).collect())
            .collect(),
        synthetic: synthetic
            .iter()
            .map(|group| group.iter().map(|s| score_synthetic(params, s)).collect())
            .collect(),
    }
}

const UNTOUCHED: usize = usize::MAX;

/// Sparse row-gradient accumulator over a table of `rows` rows; touched rows
/// are kept in first-touch order.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrads {
    dim: usize,
    slots: Vec<usize>,
    rows: Vec<usize>,
    data: Vec<f64>,
}

impl RowGrads {
    pub fn new(dim: usize, rows: usize) -> Self {
        RowGrads {
            dim,
            slots: vec![UNTOUCHED; rows],
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let dim = self.dim;
        if self.slots[row] == UNTOUCHED {
            self.slots[row] = self.rows.len();
            self.rows.push(row);
            self.data.extend(std::iter::repeat_n(0.0, dim));
        }
        let slot = self.slots[row];
        &mut self.data[slot * dim..(slot + 1) * dim]
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        match self.slots.get(row) {
            Some(&slot) if slot != UNTOUCHED => Some(&self.data[slot * self.dim..(slot + 1) * self.dim]),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows
            .iter()
            .enumerate()
            .map(move |(slot, &row)| (row, &self.data[slot * self.dim..(slot + 1) * self.dim]))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut [f64])> {
        self.rows.iter().copied().zip(self.data.chunks_mut(self.dim))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Gradients for the entity and relation tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub entities: RowGrads,
    pub relations: RowGrads,
}

impl ParamGrads {
    pub fn new(params: &ModelParams) -> Self {
        ParamGrads {
            entities: RowGrads::new(params.dim(), params.entity_count()),
            relations: RowGrads::new(params.dim(), params.relation_count()),
        }
    }

    /// Adds `2 * l2 * row` for every touched row.
    pub fn add_l2(&mut self, params: &ModelParams, l2: f64) {
        if l2 == 0.0 {
            return;
        }
        for (row, g) in self.entities.iter_mut() {
            for (gk, pk) in g.iter_mut().zip(params.entities.row(row)) {
                *gk += 2.0 * l2 * pk;
            }
        }
        for (row, g) in self.relations.iter_mut() {
            for (gk, pk) in g.iter_mut().zip(params.relations.row(row)) {
                *gk += 2.0 * l2 * pk;
            }
        }
    }
}

fn add_triple_grad(params: &ModelParams, t: &Triple, coeff: f64, grads: &mut ParamGrads, scratch: &mut [Vec<f64>; 3]) {
    if coeff == 0.0 {
        return;
    }
    for s in scratch.iter_mut() {
        s.fill(0.0);
    }
    let [gh, gr, gt] = scratch;
    accumulate_score_grad(
        params.kind,
        params.entities.row(t.head),
        params.relations.row(t.relation),
        params.entities.row(t.tail),
        coeff,
        gh,
        gr,
        gt,
    );
    for (dst, src) in grads.entities.row_mut(t.head).iter_mut().zip(gh.iter()) {
        *dst += src;
    }
    for (dst, src) in grads.relations.row_mut(t.relation).iter_mut().zip(gr.iter()) {
        *dst += src;
    }
    for (dst, src) in grads.entities.row_mut(t.tail).iter_mut().zip(gt.iter()) {
        *dst += src;
    }
}

/// Chains score gradients into the embedding tables. Synthetic triples
/// contribute through their real head/tail and relation rows only.
pub fn discriminator_grads(
    params: &ModelParams,
    batch: &PuBatch,
    synthetic: &[Vec<SyntheticTriple>],
    score_grads: &ScoreGrads,
) -> ParamGrads {
    let d = params.dim();
    let mut grads = ParamGrads::new(params);
    let mut scratch = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (i, ex) in batch.examples.iter().enumerate() {
        add_triple_grad(params, &ex.positive, score_grads.positive[i], &mut grads, &mut scratch);
        for (u, &c) in ex.unlabeled.iter().zip(&score_grads.unlabeled[i]) {
            add_triple_grad(params, u, c, &mut grads, &mut scratch);
        }
        if let (Some(group), Some(coeffs)) = (synthetic.get(i), score_grads.synthetic.get(i)) {
            for (s, &c) in group.iter().zip(coeffs) {
                if c == 0.0 {
                    continue;
                }
                for v in scratch.iter_mut() {
                    v.fill(0.0);
                }
                let (h, r, t) = synthetic_vectors(params, s);
                let [gh, gr, gt] = &mut scratch;
                accumulate_score_grad(params.kind, h, r, t, c, gh, gr, gt);
                let real = match s.side {
                    Side::Tail => (s.anchor.head, &*gh),
                    Side::Head => (s.anchor.tail, &*gt),
                };
                for (dst, src) in grads.entities.row_mut(real.0).iter_mut().zip(real.1) {
                    *dst += src;
                }
                for (dst, src) in grads.relations.row_mut(s.relation()).iter_mut().zip(gr.iter()) {
                    *dst += src;
                }
            }
        }
    }
    grads
}

/// Chains synthetic-score gradients through the generated embeddings into the
/// generator weights. Every synthetic triple must carry its tape.
pub fn generator_grads(
    params: &ModelParams,
    gen: &GeneratorParams,
    synthetic: &[Vec<SyntheticTriple>],
    score_grads: &ScoreGrads,
) -> GeneratorGrad {
    let d = params.dim();
    let mut total = GeneratorGrad::zeros_like(gen);
    let mut scratch = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (group, coeffs) in synthetic.iter().zip(&score_grads.synthetic) {
        for (s, &c) in group.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for v in scratch.iter_mut() {
                v.fill(0.0);
            }
            let (h, r, t) = synthetic_vectors(params, s);
            let [gh, gr, gt] = &mut scratch;
            accumulate_score_grad(params.kind, h, r, t, c, gh, gr, gt);
            let grad_embedding = match s.side {
                Side::Tail => &*gt,
                Side::Head => &*gh,
            };
            let tape = s.tape.as_ref().expect("synthetic triple without tape");
            gen.backward_into(tape, grad_embedding, &mut total);
        }
    }
    total
}

//! Alternating discriminator/generator training with Adam, early stopping on
//! validation MRR, and a JSON-lines metrics stream.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::eval::{evaluate_triples, EvalError, QuerySides};
use crate::generator::{GenMode, GeneratorError, GeneratorParams};
use crate::kg::{KnowledgeGraph, Triple};
use crate::objective::{batch_scores, discriminator_grads, generator_grads, synthesize, RowGrads};
use crate::risk::{objective_score_grads, BatchScores, ClampPolicy, Mode, Player, RiskBreakdown, RiskError};
use crate::sampler::{make_batch, sample_noise, seeded_rng, BatchSpec, PuBatch};
use crate::scoring::{EmbeddingTable, ModelParams, ScoringKind};

/// Every knob of a training run. Field names double as config-file keys
/// (with `_` spelled `-`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub scoring: ScoringKind,
    pub dim: usize,
    pub n_unlabeled: usize,
    pub m_synthetic: usize,
    pub pi_p: f64,
    pub delta: f64,
    pub lr_d: f64,
    pub lr_g: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clamp_policy: ClampPolicy,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Stop after this many non-improving validations; 0 disables early stopping.
    pub patience: usize,
    pub head_prob: f64,
    pub dropout: f64,
    /// Generator updates per discriminator update.
    pub g_steps: usize,
    /// Share of the N unlabeled slots drawn from annotated negatives, when present.
    pub true_negative_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Puda,
            scoring: ScoringKind::DistMult,
            dim: 256,
            n_unlabeled: 8,
            m_synthetic: 8,
            pi_p: 1e-5,
            delta: 1.0,
            lr_d: 1e-3,
            lr_g: 1e-3,
            l2: 0.0,
            epochs: 100,
            batch_size: 1024,
            seed: 0,
            clamp_policy: ClampPolicy::Defensive,
            eval_every: 5,
            patience: 5,
            head_prob: 0.5,
            dropout: 0.5,
            g_steps: 1,
            true_negative_fraction: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid value for `{key}`: {reason}")]
pub struct ConfigError {
    pub key: &'static str,
    pub reason: String,
}

impl ConfigError {
    fn new(key: &'static str, reason: impl Into<String>) -> Self {
        ConfigError {
            key,
            reason: reason.into(),
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mode.uses_prior() && !(self.pi_p > 0.0 && self.pi_p < 1.0) {
            return Err(ConfigError::new("pi-p", RiskError::InvalidPrior(self.pi_p).to_string()));
        }
        if self.n_unlabeled == 0 {
            return Err(ConfigError::new("n-unlabeled", "must be at least 1"));
        }
        if self.mode.uses_generator() {
            if self.m_synthetic == 0 {
                return Err(ConfigError::new(
                    "m-synthetic",
                    format!("mode {} needs at least 1", self.mode),
                ));
            }
            if self.dim < 8 {
                return Err(ConfigError::new(
                    "dim",
                    GeneratorError::DimensionTooSmall(self.dim).to_string(),
                ));
            }
            if !(self.lr_g > 0.0) {
                return Err(ConfigError::new("lr-g", "must be positive"));
            }
            if self.g_steps == 0 {
                return Err(ConfigError::new("g-steps", "must be at least 1"));
            }
            if !(self.delta > 0.0) {
                return Err(ConfigError::new("delta", "must be positive"));
            }
        }
        if self.dim == 0 {
            return Err(ConfigError::new("dim", "must be at least 1"));
        }
        if !(self.lr_d > 0.0) {
            return Err(ConfigError::new("lr-d", "must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(ConfigError::new("l2", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::new("batch-size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.head_prob) {
            return Err(ConfigError::new("head-prob", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::new("dropout", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.true_negative_fraction) {
            return Err(ConfigError::new("true-negative-fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            n_unlabeled: self.n_unlabeled,
            m_synthetic: if self.mode.uses_generator() {
                self.m_synthetic
            } else {
                0
            },
            dim: self.dim,
            delta: self.delta,
            head_prob: self.head_prob,
            true_negative_fraction: self.true_negative_fraction,
        }
    }
}

/// Adam with bias correction and lazily updated sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// One pair of moment buffers per parameter tensor of the given length.
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn tensor_count(&self) -> usize {
        self.first.len()
    }

    /// Advances the step counter; call once per optimizer step, before updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update_slice(&mut self, tensor: usize, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let m = &mut self.first[tensor][offset..offset + params.len()];
        let v = &mut self.second[tensor][offset..offset + params.len()];
        for (((p, &g), mk), vk) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *mk = self.beta1 * *mk + (1.0 - self.beta1) * g;
            *vk = self.beta2 * *vk + (1.0 - self.beta2) * g * g;
            *p -= lr * (*mk / c1) / ((*vk / c2).sqrt() + self.eps);
        }
    }

    /// Dense update of one tensor.
    pub fn update_dense(&mut self, tensor: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.first[tensor].len(), "moment shape mismatch");
        assert_eq!(params.len(), grads.len());
        self.update_slice(tensor, 0, params, grads, lr);
    }

    /// Updates only the rows present in `grads`; other rows keep their moments.
    pub fn update_rows(&mut self, tensor: usize, table: &mut EmbeddingTable, grads: &RowGrads, lr: f64) {
        assert_eq!(
            table.as_slice().len(),
            self.first[tensor].len(),
            "moment shape mismatch"
        );
        let dim = table.dim();
        for (row, g) in grads.iter() {
            self.update_slice(tensor, row * dim, table.row_mut(row), g, lr);
        }
    }
}

/// One full dense Adam step over a set of tensors.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
    assert_eq!(params.len(), state.tensor_count());
    assert_eq!(grads.len(), state.tensor_count());
    state.begin_step();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update_dense(i, p, g, lr);
    }
}

/// Per-epoch metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub objective: f64,
    pub r_p_plus: f64,
    pub r_p_minus: f64,
    pub r_u_minus: f64,
    pub r_star_minus: f64,
    /// Fraction of discriminator steps in which the clamp was active.
    pub clamp_frequency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_mrr: Option<f64>,
    pub skipped: usize,
    pub negative_fallbacks: usize,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &EpochRecord) -> io::Result<()>;
}

impl MetricsSink for Vec<EpochRecord> {
    fn record(&mut self, rec: &EpochRecord) -> io::Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &EpochRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line.
pub struct JsonLines<W: Write>(pub W);

impl<W: Write> MetricsSink for JsonLines<W> {
    fn record(&mut self, rec: &EpochRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.0, rec)?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {dump}")]
    NonFiniteLoss { epoch: usize, batch: usize, dump: String },
    #[error("training graph has no positives")]
    EmptyTrainingSet,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("metrics sink failed: {0}")]
    Metrics(#[from] io::Error),
}

/// Result of a finished run: the best-validation snapshot and the history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub generator: Option<GeneratorParams>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
}

const STREAM_INIT_D: u64 = 0;
const STREAM_INIT_G: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

/// Training state: parameters, optimizer moments and the rng streams.
pub struct Trainer<'g> {
    graph: &'g KnowledgeGraph,
    cfg: TrainConfig,
    pub params: ModelParams,
    pub generator: Option<GeneratorParams>,
    adam_d: AdamState,
    adam_g: Option<AdamState>,
    shuffle_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

/// Summary of one discriminator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub breakdown: RiskBreakdown,
    pub skipped: usize,
    pub negative_fallbacks: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g KnowledgeGraph, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if graph.train().is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let params = ModelParams::init(
            graph.entity_count(),
            graph.relation_count(),
            cfg.dim,
            cfg.scoring,
            &mut seeded_rng(cfg.seed, STREAM_INIT_D),
        );
        let generator = if cfg.mode.uses_generator() {
            let gen = GeneratorParams::init(cfg.dim, cfg.dropout, &mut seeded_rng(cfg.seed, STREAM_INIT_G))
                .map_err(|e| ConfigError::new("dim", e.to_string()))?;
            Some(gen)
        } else {
            None
        };
        let adam_d = AdamState::new(&[params.entities.as_slice().len(), params.relations.as_slice().len()]);
        let adam_g = generator
            .as_ref()
            .map(|gen| AdamState::new(&gen.tensors().map(|t| t.len())));
        Ok(Trainer {
            graph,
            params,
            generator,
            adam_d,
            adam_g,
            shuffle_rng: seeded_rng(cfg.seed, STREAM_SHUFFLE),
            sample_rng: seeded_rng(cfg.seed, STREAM_SAMPLE),
            dropout_rng: seeded_rng(cfg.seed, STREAM_DROPOUT),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Draws fresh unlabeled triples and noise for `positives`.
    pub fn sample_batch(&mut self, positives: &[Triple]) -> PuBatch {
        make_batch(self.graph, positives, &self.cfg.batch_spec(), &mut self.sample_rng)
    }

    fn scores_for(
        &mut self,
        batch: &PuBatch,
        keep_tapes: bool,
    ) -> (BatchScores, Vec<Vec<crate::objective::SyntheticTriple>>) {
        let synthetic = match &self.generator {
            Some(gen) => {
                let noise: Vec<_> = batch.examples.iter().map(|e| e.noise.clone()).collect();
                synthesize(gen, batch, &noise, GenMode::Train, keep_tapes, &mut self.dropout_rng)
            }
            None => Vec::new(),
        };
        (batch_scores(&self.params, batch, &synthetic), synthetic)
    }

    /// Objective on `batch` at the current parameters. The generator runs
    /// without dropout and no rng stream advances.
    pub fn objective_on(&self, batch: &PuBatch) -> Result<RiskBreakdown, RiskError> {
        let synthetic = match &self.generator {
            Some(gen) => {
                let noise: Vec<_> = batch.examples.iter().map(|e| e.noise.clone()).collect();
                synthesize(
                    gen,
                    batch,
                    &noise,
                    GenMode::Inference,
                    false,
                    &mut self.dropout_rng.clone(),
                )
            }
            None => Vec::new(),
        };
        let scores = batch_scores(&self.params, batch, &synthetic);
        Ok(objective_score_grads(
            self.cfg.mode,
            self.cfg.pi_p,
            &scores,
            self.cfg.clamp_policy,
            Player::Discriminator,
        )?
        .breakdown)
    }

    /// Minimizes the objective over the embedding tables on one batch.
    pub fn d_step(&mut self, batch: &PuBatch) -> Result<RiskBreakdown, RiskError> {
        let (scores, synthetic) = self.scores_for(batch, false);
        let sg = objective_score_grads(
            self.cfg.mode,
            self.cfg.pi_p,
            &scores,
            self.cfg.clamp_policy,
            Player::Discriminator,
        )?;
        if !sg.breakdown.objective.is_finite() {
            // Leave the tables untouched so the caller can report the batch.
            return Ok(sg.breakdown);
        }
        let mut grads = discriminator_grads(&self.params, batch, &synthetic, &sg);
        grads.add_l2(&self.params, self.cfg.l2);
        self.adam_d.begin_step();
        self.adam_d
            .update_rows(0, &mut self.params.entities, &grads.entities, self.cfg.lr_d);
        self.adam_d
            .update_rows(1, &mut self.params.relations, &grads.relations, self.cfg.lr_d);
        debug_assert!(self.params.is_finite(), "embedding table became non-finite");
        Ok(sg.breakdown)
    }

    /// Maximizes the objective over the generator, with fresh noise, reusing
    /// the batch's positives and unlabeled triples.
    pub fn g_step(&mut self, batch: &PuBatch) -> Result<Option<RiskBreakdown>, RiskError> {
        if self.generator.is_none() {
            return Ok(None);
        }
        let mut fresh = batch.clone();
        for ex in fresh.examples.iter_mut() {
            ex.noise = sample_noise(self.cfg.m_synthetic, self.cfg.dim, self.cfg.delta, &mut self.sample_rng);
        }
        let (scores, synthetic) = self.scores_for(&fresh, true);
        let sg = objective_score_grads(
            self.cfg.mode,
            self.cfg.pi_p,
            &scores,
            self.cfg.clamp_policy,
            Player::Generator,
        )?;
        let gen = self.generator.as_mut().expect("checked above");
        let grads = generator_grads(&self.params, gen, &synthetic, &sg);
        let adam = self.adam_g.as_mut().expect("generator has optimizer state");
        adam.begin_step();
        for (i, (p, g)) in gen.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            adam.update_dense(i, p, g, self.cfg.lr_g);
        }
        debug_assert!(gen.is_finite(), "generator became non-finite");
        Ok(Some(sg.breakdown))
    }

    /// D-step followed by `g_steps` G-steps on one chunk of positives.
    pub fn step(&mut self, positives: &[Triple], epoch: usize, index: usize) -> Result<Option<StepReport>, TrainError> {
        let batch = self.sample_batch(positives);
        if batch.is_empty() {
            return Ok(None);
        }
        let breakdown = self.d_step(&batch)?;
        if !breakdown.objective.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: index,
                dump: dump_batch(&batch, &breakdown),
            });
        }
        for _ in 0..self.cfg.g_steps {
            self.g_step(&batch)?;
        }
        Ok(Some(StepReport {
            breakdown,
            skipped: batch.skipped,
            negative_fallbacks: batch.negative_fallbacks,
        }))
    }

    /// One pass over the shuffled training set.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord, TrainError> {
        let mut order: Vec<Triple> = self.graph.train().to_vec();
        order.shuffle(&mut self.shuffle_rng);
        let mut rec = EpochRecord {
            epoch,
            mode: self.cfg.mode,
            objective: 0.0,
            r_p_plus: 0.0,
            r_p_minus: 0.0,
            r_u_minus: 0.0,
            r_star_minus: 0.0,
            clamp_frequency: 0.0,
            valid_mrr: None,
            skipped: 0,
            negative_fallbacks: 0,
        };
        let mut steps = 0usize;
        for (i, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let Some(report) = self.step(chunk, epoch, i)? else {
                continue;
            };
            let b = report.breakdown;
            rec.objective += b.objective;
            rec.r_p_plus += b.r_p_plus;
            rec.r_p_minus += b.r_p_minus;
            rec.r_u_minus += b.r_u_minus;
            rec.r_star_minus += b.r_star_minus;
            rec.clamp_frequency += if b.clamp_active { 1.0 } else { 0.0 };
            rec.skipped += report.skipped;
            rec.negative_fallbacks += report.negative_fallbacks;
            steps += 1;
        }
        if steps > 0 {
            let n = steps as f64;
            for x in [
                &mut rec.objective,
                &mut rec.r_p_plus,
                &mut rec.r_p_minus,
                &mut rec.r_u_minus,
                &mut rec.r_star_minus,
                &mut rec.clamp_frequency,
            ] {
                *x /= n;
            }
        }
        Ok(rec)
    }

    pub fn validation_mrr(&self) -> Result<Option<f64>, EvalError> {
        if self.graph.valid().is_empty() {
            return Ok(None);
        }
        let report = evaluate_triples(&self.params, self.graph, self.graph.valid(), QuerySides::Both, false)?;
        Ok(Some(report.mrr))
    }
}

fn dump_batch(batch: &PuBatch, breakdown: &RiskBreakdown) -> String {
    let shown: Vec<String> = batch
        .examples
        .iter()
        .take(8)
        .map(|ex| format!("({}, {}, {})", ex.positive.head, ex.positive.relation, ex.positive.tail))
        .collect();
    format!(
        "{breakdown:?}; {} positives, first: [{}]",
        batch.len(),
        shown.join(", ")
    )
}

/// Runs the full training loop and returns the best-validation snapshot.
pub fn train(
    graph: &KnowledgeGraph,
    cfg: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(graph, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams, Option<GeneratorParams>)> = None;
    let mut stale = 0usize;
    let mut last_epoch = 0;

    for epoch in 1..=cfg.epochs {
        let mut rec = trainer.run_epoch(epoch)?;
        last_epoch = epoch;
        let validate = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        if validate {
            rec.valid_mrr = trainer.validation_mrr()?;
        }
        debug!(
            epoch,
            objective = rec.objective,
            clamp = rec.clamp_frequency,
            "epoch done"
        );
        sink.record(&rec)?;
        history.push(rec.clone());

        if let Some(mrr) = rec.valid_mrr {
            info!(epoch, valid_mrr = mrr, "validation");
            if best.as_ref().is_none_or(|(b, ..)| mrr > *b) {
                best = Some((mrr, epoch, trainer.params.clone(), trainer.generator.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    info!(epoch, "early stop");
                    break;
                }
            }
        }
    }

    Ok(match best {
        Some((mrr, epoch, params, generator)) => TrainOutcome {
            params,
            generator,
            history,
            best_epoch: epoch,
            best_valid_mrr: Some(mrr),
        },
        None => TrainOutcome {
            params: trainer.params,
            generator: trainer.generator,
            history,
            best_epoch: last_epoch,
            best_valid_mrr: None,
        },
    })
}

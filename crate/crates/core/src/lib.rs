//! Positive-unlabeled knowledge graph completion with adversarial data augmentation.
//!
//! The discriminator is a DistMult or TransE scorer trained against a
//! non-negative PU risk. An optional MLP generator synthesizes entity
//! embeddings that act as additional negatives.

pub mod ablation;
pub mod checkpoint;
pub mod eval;
pub mod generator;
pub mod gradcheck;
pub mod kg;
pub mod objective;
pub mod risk;
pub mod sampler;
pub mod scoring;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use eval::{evaluate, EvalError, EvalReport};
pub use generator::{GeneratorError, GeneratorParams};
pub use kg::{KgError, KnowledgeGraph, Side, Split, Triple};
pub use risk::{ClampPolicy, Mode, RiskBreakdown};
pub use sampler::seeded_rng;
pub use scoring::{ModelParams, ScoringKind};
pub use trainer::{train, TrainConfig, TrainError, TrainOutcome};

//! Unlabeled corruption sampling, generator noise and batch assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Side, Triple};

/// Seeded random source used throughout; `stream` separates independent workers.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Attempts per requested draw before falling back to enumerating the pool.
const RETRY_FACTOR: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("every substitution of the {side:?} of {positive:?} is a known triple")]
    EmptyCandidatePool { positive: Triple, side: Side },
}

/// Draws `n` corruptions of `positive` on `side`, uniformly with replacement from
/// entities whose substitution is not a known triple.
pub fn sample_unlabeled<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    positive: &Triple,
    n: usize,
    side: Side,
    rng: &mut R,
) -> Result<Vec<Triple>, SampleError> {
    assert!(n >= 1, "n must be at least 1");
    let ne = g.entity_count();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    let budget = RETRY_FACTOR * n;
    while out.len() < n && attempts < budget {
        attempts += 1;
        let candidate = positive.with_entity(side, rng.random_range(0..ne));
        if !g.is_known(&candidate) {
            out.push(candidate);
        }
    }
    if out.len() == n {
        return Ok(out);
    }

    // Retry budget exhausted: the pool is tiny or empty. Enumerate it so the
    // result stays uniform and an empty pool is reported exactly.
    let known = g.known_fillers(positive, side);
    let pool: Vec<usize> = (0..ne).filter(|e| known.binary_search(e).is_err()).collect();
    if pool.is_empty() {
        return Err(SampleError::EmptyCandidatePool {
            positive: *positive,
            side,
        });
    }
    while out.len() < n {
        let e = pool[rng.random_range(0..pool.len())];
        out.push(positive.with_entity(side, e));
    }
    Ok(out)
}

/// `m` vectors of dimension `d` with i.i.d. `N(0, delta^2)` coordinates.
pub fn sample_noise<R: Rng + ?Sized>(m: usize, d: usize, delta: f64, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(m >= 1 && d >= 1, "m and d must be at least 1");
    assert!(delta > 0.0 && delta.is_finite(), "delta must be positive");
    let normal = Normal::new(0.0, delta).expect("valid normal");
    (0..m).map(|_| (0..d).map(|_| normal.sample(rng)).collect()).collect()
}

/// Batch assembly knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    /// Unlabeled triples per positive (N).
    pub n_unlabeled: usize,
    /// Noise vectors per positive (M); zero when no generator is trained.
    pub m_synthetic: usize,
    pub dim: usize,
    pub delta: f64,
    /// Probability of corrupting the head rather than the tail.
    pub head_prob: f64,
    /// Fraction of the N unlabeled slots filled from annotated negatives,
    /// when the graph carries them.
    pub true_negative_fraction: f64,
}

/// One positive with its unlabeled corruptions and generator noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PuExample {
    pub positive: Triple,
    pub side: Side,
    pub unlabeled: Vec<Triple>,
    pub noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PuBatch {
    pub examples: Vec<PuExample>,
    /// Positives dropped because their candidate pool was empty.
    pub skipped: usize,
    /// Slots meant for annotated negatives that fell back to corruption.
    pub negative_fallbacks: usize,
}

impl PuBatch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Assembles a batch: per positive a corruption side, N unlabeled triples and
/// M noise vectors. A pure function of its inputs and the rng state.
pub fn make_batch<R: Rng + ?Sized>(g: &KnowledgeGraph, positives: &[Triple], spec: &BatchSpec, rng: &mut R) -> PuBatch {
    let mut batch = PuBatch {
        examples: Vec::with_capacity(positives.len()),
        ..PuBatch::default()
    };
    let use_negatives = g.has_true_negatives() && spec.true_negative_fraction > 0.0;
    for positive in positives {
        let side = if rng.random_bool(spec.head_prob) {
            Side::Head
        } else {
            Side::Tail
        };

        let mut unlabeled = Vec::with_capacity(spec.n_unlabeled);
        if use_negatives {
            let wanted = (spec.true_negative_fraction * spec.n_unlabeled as f64).round() as usize;
            let wanted = wanted.min(spec.n_unlabeled);
            let fillers = g.negative_fillers(positive, side);
            if fillers.is_empty() {
                batch.negative_fallbacks += wanted;
            } else {
                for _ in 0..wanted {
                    let e = fillers[rng.random_range(0..fillers.len())];
                    unlabeled.push(positive.with_entity(side, e));
                }
            }
        }
        let remaining = spec.n_unlabeled - unlabeled.len();
        if remaining > 0 {
            match sample_unlabeled(g, positive, remaining, side, rng) {
                Ok(mut u) => unlabeled.append(&mut u),
                Err(SampleError::EmptyCandidatePool { .. }) => {
                    batch.skipped += 1;
                    continue;
                }
            }
        }

        let noise = if spec.m_synthetic > 0 {
            sample_noise(spec.m_synthetic, spec.dim, spec.delta, rng)
        } else {
            Vec::new()
        };
        batch.examples.push(PuExample {
            positive: *positive,
            side,
            unlabeled,
            noise,
        });
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_fact() -> KnowledgeGraph {
        KnowledgeGraph::from_ids(5, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap()
    }

    #[test]
    fn pool_excludes_known_tails() {
        let g = single_fact();
        let mut rng = seeded_rng(3, 0);
        let out = sample_unlabeled(&g, &Triple::new(0, 0, 1), 3, Side::Tail, &mut rng).unwrap();
        assert_eq!(out.len(), 3);
        for t in out {
            assert_eq!((t.head, t.relation), (0, 0));
            assert!([0, 2, 3, 4].contains(&t.tail));
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let g = single_fact();
        let p = Triple::new(0, 0, 1);
        let a = sample_unlabeled(&g, &p, 50, Side::Head, &mut seeded_rng(9, 2)).unwrap();
        let b = sample_unlabeled(&g, &p, 50, Side::Head, &mut seeded_rng(9, 2)).unwrap();
        let c = sample_unlabeled(&g, &p, 50, Side::Head, &mut seeded_rng(9, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_pool_is_an_error() {
        // every tail of (0, 0, ?) is known
        let train = (0..3).map(|t| Triple::new(0, 0, t)).collect();
        let g = KnowledgeGraph::from_ids(3, 1, train, vec![], vec![]).unwrap();
        let err = sample_unlabeled(&g, &Triple::new(0, 0, 1), 2, Side::Tail, &mut seeded_rng(0, 0)).unwrap_err();
        assert_eq!(
            err,
            SampleError::EmptyCandidatePool {
                positive: Triple::new(0, 0, 1),
                side: Side::Tail
            }
        );
        // the head side of the same positive still has candidates
        assert!(sample_unlabeled(&g, &Triple::new(0, 0, 1), 2, Side::Head, &mut seeded_rng(0, 0)).is_ok());
    }

    #[test]
    fn tiny_pool_still_sampled_after_retry_budget() {
        // only entity 7 is a valid tail; rejection sampling alone would usually miss it
        let ne = 2000;
        let train: Vec<_> = (0..ne).filter(|&t| t != 7).map(|t| Triple::new(0, 0, t)).collect();
        let g = KnowledgeGraph::from_ids(ne, 1, train, vec![], vec![]).unwrap();
        let out = sample_unlabeled(&g, &Triple::new(0, 0, 1), 4, Side::Tail, &mut seeded_rng(1, 0)).unwrap();
        assert!(out.iter().all(|t| t.tail == 7));
    }

    #[test]
    #[should_panic(expected = "delta must be positive")]
    fn zero_delta_rejected() {
        sample_noise(1, 2, 0.0, &mut seeded_rng(0, 0));
    }

    #[test]
    fn noise_is_deterministic() {
        let a = sample_noise(4, 3, 1.0, &mut seeded_rng(5, 0));
        let b = sample_noise(4, 3, 1.0, &mut seeded_rng(5, 0));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|z| z.len() == 3));
    }

    #[test]
    fn batch_shapes() {
        let train: Vec<_> = (0..10).map(|i| Triple::new(i, 0, (i + 1) % 10)).collect();
        let g = KnowledgeGraph::from_ids(10, 1, train.clone(), vec![], vec![]).unwrap();
        let spec = BatchSpec {
            n_unlabeled: 4,
            m_synthetic: 2,
            dim: 3,
            delta: 1.0,
            head_prob: 0.5,
            true_negative_fraction: 0.0,
        };
        let batch = make_batch(&g, &train, &spec, &mut seeded_rng(0, 0));
        assert_eq!(batch.len(), 10);
        for ex in &batch.examples {
            assert_eq!(ex.unlabeled.len(), 4);
            assert_eq!(ex.noise.len(), 2);
            for u in &ex.unlabeled {
                assert!(!g.is_known(u));
                let kept = ex.positive.with_entity(ex.side, u.entity(ex.side));
                assert_eq!(&kept, u);
            }
        }
    }

    #[test]
    fn annotated_negatives_fill_configured_slots() {
        let train = vec![Triple::new(0, 0, 1)];
        let negatives = vec![Triple::new(0, 0, 2), Triple::new(3, 0, 1)];
        let g = KnowledgeGraph::from_splits(
            crate::kg::Vocab::numbered(6),
            crate::kg::Vocab::numbered(1),
            train.clone(),
            vec![],
            vec![],
            negatives,
        )
        .unwrap();
        let spec = BatchSpec {
            n_unlabeled: 4,
            m_synthetic: 0,
            dim: 2,
            delta: 1.0,
            head_prob: 0.5,
            true_negative_fraction: 0.5,
        };
        let mut rng = seeded_rng(11, 0);
        for _ in 0..50 {
            let batch = make_batch(&g, &train, &spec, &mut rng);
            let ex = &batch.examples[0];
            let expected = match ex.side {
                Side::Tail => Triple::new(0, 0, 2),
                Side::Head => Triple::new(3, 0, 1),
            };
            assert_eq!(&ex.unlabeled[..2], &[expected, expected]);
            assert_eq!(ex.unlabeled.len(), 4);
            assert_eq!(batch.negative_fallbacks, 0);
        }
    }

    #[test]
    fn missing_negatives_fall_back_to_corruption() {
        let train = vec![Triple::new(0, 0, 1), Triple::new(4, 0, 5)];
        let g = KnowledgeGraph::from_splits(
            crate::kg::Vocab::numbered(6),
            crate::kg::Vocab::numbered(1),
            train.clone(),
            vec![],
            vec![],
            vec![Triple::new(0, 0, 2)],
        )
        .unwrap();
        let spec = BatchSpec {
            n_unlabeled: 2,
            m_synthetic: 0,
            dim: 2,
            delta: 1.0,
            head_prob: 0.0,
            true_negative_fraction: 1.0,
        };
        let batch = make_batch(&g, &train[1..], &spec, &mut seeded_rng(0, 0));
        assert_eq!(batch.negative_fallbacks, 2);
        assert_eq!(batch.examples[0].unlabeled.len(), 2);
    }
}

mod common;

use proptest::prelude::*;
use puda::kg::Side;
use puda::sampler::{make_batch, sample_noise, sample_unlabeled, BatchSpec, SampleError};
use puda::{seeded_rng, KnowledgeGraph, Triple};

fn spec(n: usize, m: usize) -> BatchSpec {
    BatchSpec {
        n_unlabeled: n,
        m_synthetic: m,
        dim: 3,
        delta: 1.0,
        head_prob: 0.5,
        true_negative_fraction: 0.5,
    }
}

proptest! {
    #[test]
    fn corruptions_are_never_known(g in common::arb_graph(), n in 1usize..6, seed: u64, head: bool) {
        let side = if head { Side::Head } else { Side::Tail };
        let mut rng = seeded_rng(seed, 0);
        for pos in g.train() {
            match sample_unlabeled(&g, pos, n, side, &mut rng) {
                Ok(us) => {
                    prop_assert_eq!(us.len(), n);
                    for u in us {
                        prop_assert!(!g.is_known(&u));
                        prop_assert_eq!(u.relation, pos.relation);
                        match side {
                            Side::Head => prop_assert_eq!(u.tail, pos.tail),
                            Side::Tail => prop_assert_eq!(u.head, pos.head),
                        }
                    }
                }
                Err(SampleError::EmptyCandidatePool { .. }) => {
                    prop_assert_eq!(g.known_fillers(pos, side).len(), g.entity_count());
                }
            }
        }
    }

    #[test]
    fn batches_are_pure_functions_of_the_seed(g in common::arb_graph(), n in 1usize..5, m in 0usize..3, seed: u64) {
        let a = make_batch(&g, g.train(), &spec(n, m), &mut seeded_rng(seed, 3));
        let b = make_batch(&g, g.train(), &spec(n, m), &mut seeded_rng(seed, 3));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len() + a.skipped, g.train().len());
        for ex in &a.examples {
            prop_assert_eq!(ex.unlabeled.len(), n);
            prop_assert_eq!(ex.noise.len(), m);
            prop_assert!(ex.noise.iter().all(|z| z.len() == 3));
            prop_assert!(ex.unlabeled.iter().all(|u| !g.is_known(u)));
        }
    }
}

#[test]
fn uniform_over_candidate_pool() {
    let g = KnowledgeGraph::from_ids(5, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
    let mut rng = seeded_rng(11, 0);
    let draws = sample_unlabeled(&g, &Triple::new(0, 0, 1), 100_000, Side::Tail, &mut rng).unwrap();
    let mut counts = [0usize; 5];
    for t in &draws {
        counts[t.tail] += 1;
    }
    assert_eq!(counts[1], 0);
    for e in [0, 2, 3, 4] {
        let f = counts[e] as f64 / draws.len() as f64;
        assert!((f - 0.25).abs() < 0.01, "entity {e}: {f}");
    }
    // Chi-square against uniform, 3 degrees of freedom; 16.27 is the 0.1% point.
    let expected = draws.len() as f64 / 4.0;
    let chi2: f64 = [0, 2, 3, 4]
        .iter()
        .map(|&e| (counts[e] as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn noise_moments() {
    let z = sample_noise(100_000, 2, 1.0, &mut seeded_rng(5, 0));
    for k in 0..2 {
        let n = z.len() as f64;
        let mean = z.iter().map(|v| v[k]).sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
    }
}

#[test]
fn head_tail_coin_is_fair() {
    let triples: Vec<Triple> = (0..100).map(|i| Triple::new(i, 0, (i + 1) % 100)).collect();
    let g = KnowledgeGraph::from_ids(100, 1, triples.clone(), vec![], vec![]).unwrap();
    let positives: Vec<Triple> = triples.iter().cycle().take(10_000).copied().collect();
    let batch = make_batch(&g, &positives, &spec(1, 0), &mut seeded_rng(2, 0));
    let heads = batch.examples.iter().filter(|e| e.side == Side::Head).count() as f64;
    assert!((heads / 10_000.0 - 0.5).abs() < 0.02);
}

#[test]
fn annotated_negatives_take_their_share() {
    let g = KnowledgeGraph::from_splits(
        puda::kg::Vocab::numbered(6),
        puda::kg::Vocab::numbered(1),
        vec![Triple::new(0, 0, 1)],
        vec![],
        vec![],
        vec![Triple::new(0, 0, 4), Triple::new(5, 0, 1)],
    )
    .unwrap();
    let batch = make_batch(&g, &[Triple::new(0, 0, 1); 50], &spec(4, 0), &mut seeded_rng(1, 0));
    for ex in &batch.examples {
        let annotated = ex
            .unlabeled
            .iter()
            .filter(|u| **u == Triple::new(0, 0, 4) || **u == Triple::new(5, 0, 1))
            .count();
        assert!(annotated >= 2, "{ex:?}");
    }
    assert_eq!(batch.negative_fallbacks, 0);
}

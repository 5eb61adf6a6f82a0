//! Central finite-difference checks of every analytic gradient.
//!
//! Relative error per coordinate is `|a - n| / max(|a|, |n|, FLOOR)`; the
//! floor keeps near-zero partials from turning rounding noise into a failure.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::generator::{GenMode, GeneratorParams};
use crate::kg::{KnowledgeGraph, Triple};
use crate::objective::{batch_scores, discriminator_grads, generator_grads, synthesize};
use crate::risk::{assemble_objective, objective_score_grads, BatchScores, ClampPolicy, Mode, Player};
use crate::sampler::{make_batch, seeded_rng, BatchSpec};
use crate::scoring::{score, score_with_grad, EmbeddingTable, ModelParams, ScoringKind};

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;

/// Deliberate bugs used to confirm the harness can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the analytic DistMult gradient in the scoring suite.
    DistMultSignFlip,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 100,
            seed: 0,
            fault: None,
        }
    }
}

/// Worst coordinate seen by a suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coordinate {
    pub trial: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        SuiteResult {
            name,
            trials: 0,
            coordinates: 0,
            max_rel_error: 0.0,
            worst: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    /// Compares analytic tensors against central differences of `f`.
    fn compare(
        &mut self,
        trial: usize,
        names: &[&str],
        inputs: &[Vec<f64>],
        analytic: &[Vec<f64>],
        f: impl Fn(&[Vec<f64>]) -> f64,
    ) {
        let mut work = inputs.to_vec();
        for (t, name) in names.iter().enumerate() {
            assert_eq!(inputs[t].len(), analytic[t].len(), "gradient shape for {name}");
            for k in 0..inputs[t].len() {
                let x = inputs[t][k];
                work[t][k] = x + STEP;
                let fp = f(&work);
                work[t][k] = x - STEP;
                let fm = f(&work);
                work[t][k] = x;
                let numeric = (fp - fm) / (2.0 * STEP);
                let a = analytic[t][k];
                let rel = rel_error(a, numeric);
                self.coordinates += 1;
                if rel > self.max_rel_error || !rel.is_finite() {
                    self.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                    self.worst = Some(Coordinate {
                        trial,
                        tensor: name.to_string(),
                        index: k,
                        analytic: a,
                        numeric,
                        rel_error: rel,
                    });
                }
            }
        }
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<10} trials={} coords={} max_rel_err={:.3e}",
            self.name, self.trials, self.coordinates, self.max_rel_error
        )?;
        if let (false, Some(w)) = (self.passed(), &self.worst) {
            write!(
                f,
                " at trial {} {}[{}]: analytic={:.9e} numeric={:.9e}",
                w.trial, w.tensor, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Both scoring functions on random vectors of random dimension.
pub fn scoring_suite(opts: &GradcheckOptions) -> SuiteResult {
    let mut rng = seeded_rng(opts.seed, 100);
    let mut res = SuiteResult::new("scoring");
    let mut trial = 0;
    while res.trials < opts.trials {
        trial += 1;
        let kind = if trial % 2 == 0 {
            ScoringKind::DistMult
        } else {
            ScoringKind::TransE
        };
        let d = rng.random_range(1..=16);
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| uniform_vec(&mut rng, d, 1.0)).collect();
        if kind == ScoringKind::TransE && score(kind, &inputs[0], &inputs[1], &inputs[2]).abs() < 1e-2 {
            continue; // too close to the non-differentiable point
        }
        let g = score_with_grad(kind, &inputs[0], &inputs[1], &inputs[2]);
        let mut analytic = vec![g.grad_head, g.grad_relation, g.grad_tail];
        if opts.fault == Some(Fault::DistMultSignFlip) && kind == ScoringKind::DistMult {
            analytic.iter_mut().flatten().for_each(|x| *x = -*x);
        }
        res.compare(trial, &["head", "relation", "tail"], &inputs, &analytic, |v| {
            score(kind, &v[0], &v[1], &v[2])
        });
        res.trials += 1;
    }
    res
}

fn generator_from(base: &GeneratorParams, v: &[Vec<f64>]) -> GeneratorParams {
    GeneratorParams {
        w1: v[0].clone(),
        b1: v[1].clone(),
        w2: v[2].clone(),
        b2: v[3].clone(),
        ..base.clone()
    }
}

/// Generator in inference mode: weights and noise input, random projection of the output.
pub fn generator_suite(opts: &GradcheckOptions) -> SuiteResult {
    let mut rng = seeded_rng(opts.seed, 200);
    let mut res = SuiteResult::new("generator");
    let mut trial = 0;
    while res.trials < opts.trials {
        trial += 1;
        let d = rng.random_range(8..=32);
        let mut gen = GeneratorParams::init(d, 0.5, &mut rng).expect("d >= 8");
        for b in gen.b1.iter_mut().chain(gen.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let proj = uniform_vec(&mut rng, d, 1.0);
        let (_, tape) = gen.generate(&z, GenMode::Inference, &mut rng);
        if tape.pre_hidden.iter().any(|a| a.abs() < 1e-3) {
            continue; // ReLU kink within reach of the finite-difference step
        }
        let (grad, grad_z) = gen.backward(&tape, &proj);

        let mut inputs: Vec<Vec<f64>> = gen.tensors().iter().map(|t| t.to_vec()).collect();
        inputs.push(z.clone());
        let mut analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        analytic.push(grad_z);
        res.compare(trial, &["w1", "b1", "w2", "b2", "z"], &inputs, &analytic, |v| {
            let g = generator_from(&gen, v);
            let (out, _) = g.generate(&v[4], GenMode::Inference, &mut seeded_rng(0, 0));
            out.iter().zip(&proj).map(|(o, p)| o * p).sum()
        });
        res.trials += 1;
    }
    res
}

fn random_groups<R: Rng + ?Sized>(rng: &mut R, b: usize, n: usize) -> Vec<Vec<f64>> {
    (0..b).map(|_| uniform_vec(rng, n, 3.0)).collect()
}

fn flatten(scores: &BatchScores) -> Vec<Vec<f64>> {
    vec![
        scores.positive.clone(),
        scores.unlabeled.concat(),
        scores.synthetic.concat(),
    ]
}

fn unflatten(v: &[Vec<f64>], n: usize, m: usize) -> BatchScores {
    BatchScores {
        positive: v[0].clone(),
        unlabeled: v[1].chunks(n).map(<[f64]>::to_vec).collect(),
        synthetic: if m == 0 {
            Vec::new()
        } else {
            v[2].chunks(m).map(<[f64]>::to_vec).collect()
        },
    }
}

/// Score-level gradients of every mode's objective, both players.
fn risk_checks<R: Rng + ?Sized>(rng: &mut R, trial: usize, res: &mut SuiteResult) -> bool {
    let mode = Mode::ALL[trial % Mode::ALL.len()];
    let (b, n) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let m = if mode.uses_generator() {
        rng.random_range(1..=4)
    } else {
        0
    };
    let pi_p = rng.random_range(0.01..0.9);
    let scores = BatchScores {
        positive: uniform_vec(rng, b, 3.0),
        unlabeled: random_groups(rng, b, n),
        synthetic: if m == 0 { Vec::new() } else { random_groups(rng, b, m) },
    };
    let breakdown = assemble_objective(mode, pi_p, &scores).expect("valid instance");
    if mode.uses_prior() && breakdown.inner.abs() < 1e-3 {
        return false;
    }
    let objective = |v: &[Vec<f64>]| {
        assemble_objective(mode, pi_p, &unflatten(v, n, m))
            .expect("valid instance")
            .objective
    };
    let inputs = flatten(&scores);
    let names = ["positive", "unlabeled", "synthetic"];

    let d = objective_score_grads(mode, pi_p, &scores, ClampPolicy::Zero, Player::Discriminator).expect("valid");
    let analytic = vec![d.positive, d.unlabeled.concat(), d.synthetic.concat()];
    res.compare(trial, &names, &inputs, &analytic, objective);

    if mode.uses_generator() {
        // the generator sees only the synthetic scores and ascends the objective
        let g = objective_score_grads(mode, pi_p, &scores, ClampPolicy::Zero, Player::Generator).expect("valid");
        res.compare(
            trial,
            &["synthetic (generator)"],
            &inputs[2..],
            &[g.synthetic.concat()],
            |v| {
                let mut all = inputs.clone();
                all[2] = v[0].clone();
                -objective(&all)
            },
        );
    }
    true
}

fn params_from(kind: ScoringKind, ne: usize, nr: usize, d: usize, v: &[Vec<f64>]) -> ModelParams {
    ModelParams {
        kind,
        entities: EmbeddingTable::from_vec(ne, d, v[0].clone()),
        relations: EmbeddingTable::from_vec(nr, d, v[1].clone()),
    }
}

/// Full PUDA objective on the |E|=6, |R|=2, d=3, N=2, M=2 instance, w.r.t.
/// the embedding tables and the generator weights. At d=3 the d/8 rule would
/// give no hidden unit, so the generator is built with one.
fn puda_instance<R: Rng + ?Sized>(rng: &mut R, trial: usize, res: &mut SuiteResult) -> bool {
    let (ne, nr, d) = (6, 2, 3);
    let kind = if trial % 4 == 3 {
        ScoringKind::TransE
    } else {
        ScoringKind::DistMult
    };
    let mut train = Vec::new();
    while train.len() < 4 {
        let t = Triple::new(
            rng.random_range(0..ne),
            rng.random_range(0..nr),
            rng.random_range(0..ne),
        );
        if !train.contains(&t) {
            train.push(t);
        }
    }
    let graph = KnowledgeGraph::from_ids(ne, nr, train.clone(), vec![], vec![]).expect("valid graph");
    let spec = BatchSpec {
        n_unlabeled: 2,
        m_synthetic: 2,
        dim: d,
        delta: 1.0,
        head_prob: 0.5,
        true_negative_fraction: 0.0,
    };
    let batch = make_batch(&graph, &train, &spec, rng);
    let params = ModelParams {
        kind,
        entities: EmbeddingTable::from_vec(ne, d, uniform_vec(rng, ne * d, 1.0)),
        relations: EmbeddingTable::from_vec(nr, d, uniform_vec(rng, nr * d, 1.0)),
    };
    let gen = GeneratorParams {
        dim: d,
        hidden: 1,
        dropout: 0.5,
        w1: uniform_vec(rng, d, 1.0),
        b1: uniform_vec(rng, 1, 0.5),
        w2: uniform_vec(rng, d, 1.0),
        b2: uniform_vec(rng, d, 0.5),
    };
    let pi_p = rng.random_range(0.01..0.5);
    let noise: Vec<_> = batch.examples.iter().map(|e| e.noise.clone()).collect();
    let mut unused = seeded_rng(0, 0);
    let synthetic = synthesize(&gen, &batch, &noise, GenMode::Inference, true, &mut unused);
    if synthetic.iter().flatten().any(|s| {
        s.tape
            .as_ref()
            .is_some_and(|t| t.pre_hidden.iter().any(|a| a.abs() < 1e-3))
    }) {
        return false;
    }
    let scores = batch_scores(&params, &batch, &synthetic);
    let breakdown = assemble_objective(Mode::Puda, pi_p, &scores).expect("valid");
    if breakdown.inner.abs() < 1e-3 {
        return false;
    }
    if kind == ScoringKind::TransE {
        let flat = flatten(&scores);
        if flat.iter().flatten().any(|s| s.abs() < 1e-2) {
            return false;
        }
    }

    let objective_at = |p: &ModelParams, g: &GeneratorParams| {
        let synth = synthesize(g, &batch, &noise, GenMode::Inference, false, &mut seeded_rng(0, 0));
        assemble_objective(Mode::Puda, pi_p, &batch_scores(p, &batch, &synth))
            .expect("valid")
            .objective
    };

    let sg_d =
        objective_score_grads(Mode::Puda, pi_p, &scores, ClampPolicy::Zero, Player::Discriminator).expect("valid");
    let grads = discriminator_grads(&params, &batch, &synthetic, &sg_d);
    let mut ent = vec![0.0; ne * d];
    for (row, g) in grads.entities.iter() {
        ent[row * d..(row + 1) * d].copy_from_slice(g);
    }
    let mut rel = vec![0.0; nr * d];
    for (row, g) in grads.relations.iter() {
        rel[row * d..(row + 1) * d].copy_from_slice(g);
    }
    let inputs = vec![
        params.entities.as_slice().to_vec(),
        params.relations.as_slice().to_vec(),
    ];
    res.compare(trial, &["entities", "relations"], &inputs, &[ent, rel], |v| {
        objective_at(&params_from(kind, ne, nr, d, v), &gen)
    });

    let sg_g = objective_score_grads(Mode::Puda, pi_p, &scores, ClampPolicy::Zero, Player::Generator).expect("valid");
    let ggrad = generator_grads(&params, &gen, &synthetic, &sg_g);
    let inputs: Vec<Vec<f64>> = gen.tensors().iter().map(|t| t.to_vec()).collect();
    let analytic: Vec<Vec<f64>> = ggrad.tensors().iter().map(|t| t.to_vec()).collect();
    res.compare(
        trial,
        &["gen.w1", "gen.b1", "gen.w2", "gen.b2"],
        &inputs,
        &analytic,
        |v| -objective_at(&params, &generator_from(&gen, v)),
    );
    true
}

/// Risk components and the assembled objective, at score level for every
/// mode and at parameter level for the PUDA instance.
pub fn objective_suite(opts: &GradcheckOptions) -> SuiteResult {
    let mut rng = seeded_rng(opts.seed, 300);
    let mut res = SuiteResult::new("objective");
    let mut trial = 0;
    while res.trials < opts.trials {
        trial += 1;
        let risk_ok = risk_checks(&mut rng, trial, &mut res);
        let puda_ok = puda_instance(&mut rng, trial, &mut res);
        if risk_ok && puda_ok {
            res.trials += 1;
        }
    }
    res
}

pub fn run_all(opts: &GradcheckOptions) -> [SuiteResult; 3] {
    [scoring_suite(opts), generator_suite(opts), objective_suite(opts)]
}

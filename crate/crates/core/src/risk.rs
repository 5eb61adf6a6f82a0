//! Risk components of the positive-unlabeled objective and their assembly for
//! every training mode.
//!
//! All risks take plain scores; [`objective_score_grads`] returns the partial
//! derivatives of the assembled objective with respect to every score, which
//! the trainer chains into the embedding tables and the generator.
//!
//! Normalization follows batch-mean semantics: `|K|` is the number of
//! positives supplied, `N` and `M` the per-positive group sizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `ln σ(x)`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// `ln(1 + e^x) = -ln σ(-x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    assert!(n > 0, "mean of an empty sequence");
    xs.sum::<f64>() / n as f64
}

/// Risk of predicting positives as positive: mean of `-ln σ(s)`.
pub fn risk_p_plus(scores_pos: &[f64]) -> f64 {
    mean(scores_pos.iter().map(|&s| softplus(-s)))
}

/// Risk of predicting positives as negative: mean of `-ln σ(-s)`.
pub fn risk_p_minus(scores_pos: &[f64]) -> f64 {
    mean(scores_pos.iter().map(|&s| softplus(s)))
}

/// Pointwise unlabeled risk: double mean of `-ln σ(-s)`.
pub fn risk_u_pointwise(scores_unlabeled: &[Vec<f64>]) -> f64 {
    mean(
        scores_unlabeled
            .iter()
            .map(|group| mean(group.iter().map(|&s| softplus(s)))),
    )
}

/// Mean over the group of `-ln σ(pos - other)`: the risk of a non-optimal
/// ordering between one positive and its unlabeled or synthetic group.
fn pairwise_ordering_risk(score_pos: f64, others: &[f64]) -> f64 {
    mean(others.iter().map(|&s| softplus(s - score_pos)))
}

/// Per-positive pairwise unlabeled risk.
pub fn risk_u_pairwise(score_pos: f64, scores_unlabeled: &[f64]) -> f64 {
    pairwise_ordering_risk(score_pos, scores_unlabeled)
}

/// Per-positive synthetic-triple risk; same form as [`risk_u_pairwise`].
pub fn risk_star(score_pos: f64, scores_synthetic: &[f64]) -> f64 {
    pairwise_ordering_risk(score_pos, scores_synthetic)
}

/// Mean of the per-positive pairwise risks over a batch.
pub fn batch_pairwise_risk(scores_pos: &[f64], groups: &[Vec<f64>]) -> f64 {
    assert_eq!(scores_pos.len(), groups.len());
    mean(
        scores_pos
            .iter()
            .zip(groups)
            .map(|(&p, g)| pairwise_ordering_risk(p, g)),
    )
}

/// Classical positive-negative risk `π_p R_p^+ + π_n R_n^-`.
pub fn pn_risk(pi_p: f64, r_p_plus: f64, r_n_minus: f64) -> f64 {
    pi_p * r_p_plus + (1.0 - pi_p) * r_n_minus
}

/// Unclamped PU risk `π_p R_p^+ + R_u^- - π_p R_p^-`.
pub fn pu_risk(pi_p: f64, r_p_plus: f64, r_u_minus: f64, r_p_minus: f64) -> f64 {
    pi_p * r_p_plus + r_u_minus - pi_p * r_p_minus
}

/// Training objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Pairwise ranking treating every unlabeled triple as negative.
    #[serde(rename = "pn")]
    Pn,
    /// Non-negative PU risk with pointwise (classification) risks.
    #[serde(rename = "pu-c")]
    PuC,
    /// Non-negative PU risk with the pairwise unlabeled risk.
    #[serde(rename = "pu-r")]
    PuR,
    /// Pairwise ranking plus the adversarial synthetic-triple risk.
    #[serde(rename = "da")]
    Da,
    /// Non-negative pairwise PU risk unified with the synthetic-triple risk.
    #[serde(rename = "puda")]
    Puda,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Pn, Mode::PuC, Mode::PuR, Mode::Da, Mode::Puda];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Pn => "pn",
            Mode::PuC => "pu-c",
            Mode::PuR => "pu-r",
            Mode::Da => "da",
            Mode::Puda => "puda",
        }
    }

    /// Table label, e.g. `PU-R`.
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Pn => "PN",
            Mode::PuC => "PU-C",
            Mode::PuR => "PU-R",
            Mode::Da => "DA",
            Mode::Puda => "PUDA",
        }
    }

    pub fn uses_prior(&self) -> bool {
        matches!(self, Mode::PuC | Mode::PuR | Mode::Puda)
    }

    pub fn uses_generator(&self) -> bool {
        matches!(self, Mode::Da | Mode::Puda)
    }

    pub fn pointwise(&self) -> bool {
        matches!(self, Mode::PuC)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pn" => Ok(Mode::Pn),
            "pu-c" | "puc" => Ok(Mode::PuC),
            "pu-r" | "pur" => Ok(Mode::PuR),
            "da" => Ok(Mode::Da),
            "puda" => Ok(Mode::Puda),
            other => Err(format!("unknown mode {other:?} (expected pn, pu-c, pu-r, da or puda)")),
        }
    }
}

/// What the minimizer does when the non-negative clamp is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampPolicy {
    /// Follow the clamped objective: the clamped term contributes nothing.
    Zero,
    /// Step on the negated inner term only, pushing it back above zero.
    #[default]
    Defensive,
}

impl std::str::FromStr for ClampPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(ClampPolicy::Zero),
            "defensive" => Ok(ClampPolicy::Defensive),
            other => Err(format!("unknown clamp policy {other:?} (expected zero or defensive)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("mode {mode} requires {component} scores")]
    MissingComponent { mode: Mode, component: &'static str },
    #[error("class prior {0} must lie strictly between 0 and 1")]
    InvalidPrior(f64),
}

/// Scores of one batch: one entry per positive, one group per positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchScores {
    pub positive: Vec<f64>,
    pub unlabeled: Vec<Vec<f64>>,
    pub synthetic: Vec<Vec<f64>>,
}

/// The four risk components and the assembled objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub r_p_plus: f64,
    pub r_p_minus: f64,
    pub r_u_minus: f64,
    pub r_star_minus: f64,
    /// Value of the term inside the non-negative clamp (0 for unclamped modes).
    pub inner: f64,
    pub clamp_active: bool,
    pub objective: f64,
}

fn groups_present(groups: &[Vec<f64>], n: usize) -> bool {
    groups.len() == n && groups.iter().all(|g| !g.is_empty())
}

/// Forward pass of the mode's objective.
pub fn assemble_objective(mode: Mode, pi_p: f64, scores: &BatchScores) -> Result<RiskBreakdown, RiskError> {
    if mode.uses_prior() && !(pi_p > 0.0 && pi_p < 1.0) {
        return Err(RiskError::InvalidPrior(pi_p));
    }
    let n = scores.positive.len();
    if n == 0 {
        return Err(RiskError::MissingComponent {
            mode,
            component: "positive",
        });
    }
    if !groups_present(&scores.unlabeled, n) {
        return Err(RiskError::MissingComponent {
            mode,
            component: "unlabeled",
        });
    }
    if mode.uses_generator() && !groups_present(&scores.synthetic, n) {
        return Err(RiskError::MissingComponent {
            mode,
            component: "synthetic",
        });
    }

    let r_p_plus = risk_p_plus(&scores.positive);
    let r_p_minus = risk_p_minus(&scores.positive);
    let r_u_minus = if mode.pointwise() {
        risk_u_pointwise(&scores.unlabeled)
    } else {
        batch_pairwise_risk(&scores.positive, &scores.unlabeled)
    };
    let r_star_minus = if mode.uses_generator() {
        batch_pairwise_risk(&scores.positive, &scores.synthetic)
    } else {
        0.0
    };

    let mut out = RiskBreakdown {
        r_p_plus,
        r_p_minus,
        r_u_minus,
        r_star_minus,
        ..RiskBreakdown::default()
    };
    match mode {
        Mode::Pn => out.objective = r_u_minus,
        Mode::Da => out.objective = r_u_minus + r_star_minus,
        Mode::PuC | Mode::PuR | Mode::Puda => {
            out.inner = r_u_minus + r_star_minus - pi_p * r_p_minus;
            out.clamp_active = out.inner < 0.0;
            out.objective = pi_p * r_p_plus + out.inner.max(0.0);
        }
    }
    Ok(out)
}

/// Which player's loss to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    /// Minimizes the objective over the embedding tables.
    Discriminator,
    /// Maximizes the objective over the generator, i.e. minimizes its negation.
    Generator,
}

/// Gradient of a player's loss with respect to every score of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrads {
    pub breakdown: RiskBreakdown,
    pub positive: Vec<f64>,
    pub unlabeled: Vec<Vec<f64>>,
    pub synthetic: Vec<Vec<f64>>,
}

impl ScoreGrads {
    fn zeros(scores: &BatchScores, breakdown: RiskBreakdown) -> Self {
        let zero_groups = |g: &[Vec<f64>]| g.iter().map(|v| vec![0.0; v.len()]).collect();
        ScoreGrads {
            breakdown,
            positive: vec![0.0; scores.positive.len()],
            unlabeled: zero_groups(&scores.unlabeled),
            synthetic: zero_groups(&scores.synthetic),
        }
    }
}

/// Adds `weight * d(mean_i mean_j softplus(other_ij - pos_i))` into `grads`.
fn add_pairwise_grad(pos: &[f64], groups: &[Vec<f64>], weight: f64, g_pos: &mut [f64], g_groups: &mut [Vec<f64>]) {
    let b = pos.len() as f64;
    for (i, group) in groups.iter().enumerate() {
        let c = weight / (b * group.len() as f64);
        for (j, &s) in group.iter().enumerate() {
            let w = c * sigmoid(s - pos[i]);
            g_groups[i][j] += w;
            g_pos[i] -= w;
        }
    }
}

/// Gradient of the loss of `player` w.r.t. all scores.
///
/// The discriminator descends the assembled objective; when the clamp is
/// active, `Zero` drops the clamped term and `Defensive` steps on the negated
/// inner term alone. The generator ascends the objective through the
/// synthetic scores only; under `Zero` it sees the clamp (zero gradient when
/// active), under `Defensive` it ascends the synthetic risk regardless.
pub fn objective_score_grads(
    mode: Mode,
    pi_p: f64,
    scores: &BatchScores,
    policy: ClampPolicy,
    player: Player,
) -> Result<ScoreGrads, RiskError> {
    let breakdown = assemble_objective(mode, pi_p, scores)?;
    let mut grads = ScoreGrads::zeros(scores, breakdown);
    let b = scores.positive.len() as f64;

    if player == Player::Generator {
        if !mode.uses_generator() {
            return Ok(grads);
        }
        if breakdown.clamp_active && policy == ClampPolicy::Zero {
            return Ok(grads);
        }
        let mut unused = vec![0.0; scores.positive.len()];
        add_pairwise_grad(
            &scores.positive,
            &scores.synthetic,
            -1.0,
            &mut unused,
            &mut grads.synthetic,
        );
        return Ok(grads);
    }

    // Inner term (everything the clamp wraps); for PN/DA it is the whole objective.
    let inner_weight = if mode.uses_prior() && breakdown.clamp_active {
        match policy {
            ClampPolicy::Zero => 0.0,
            ClampPolicy::Defensive => -1.0,
        }
    } else {
        1.0
    };

    if inner_weight != 0.0 {
        if mode.pointwise() {
            for (i, group) in scores.unlabeled.iter().enumerate() {
                let c = inner_weight / (b * group.len() as f64);
                for (j, &s) in group.iter().enumerate() {
                    grads.unlabeled[i][j] += c * sigmoid(s);
                }
            }
        } else {
            add_pairwise_grad(
                &scores.positive,
                &scores.unlabeled,
                inner_weight,
                &mut grads.positive,
                &mut grads.unlabeled,
            );
        }
        if mode.uses_generator() {
            add_pairwise_grad(
                &scores.positive,
                &scores.synthetic,
                inner_weight,
                &mut grads.positive,
                &mut grads.synthetic,
            );
        }
        if mode.uses_prior() {
            // -π_p R_p^-
            for (g, &s) in grads.positive.iter_mut().zip(&scores.positive) {
                *g -= inner_weight * pi_p * sigmoid(s) / b;
            }
        }
    }

    // π_p R_p^+ sits outside the clamp; the defensive step omits it.
    let outside = mode.uses_prior() && !(breakdown.clamp_active && policy == ClampPolicy::Defensive);
    if outside {
        for (g, &s) in grads.positive.iter_mut().zip(&scores.positive) {
            *g -= pi_p * sigmoid(-s) / b;
        }
    }
    Ok(grads)
}

/// Gradient of the generator loss expressed as the negated discriminator
/// gradient restricted to the synthetic scores; used to check the minimax
/// sign contract.
pub fn negated_synthetic(grads: &ScoreGrads) -> Vec<Vec<f64>> {
    grads.synthetic.iter().map(|g| g.iter().map(|x| -x).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_sigmoid_values() {
        assert!(close(log_sigmoid(0.0), -LN2, 1e-15));
        let big = log_sigmoid(50.0);
        assert!(big < 0.0 && close(big, -1.9287498479639178e-22, 1e-35));
        assert!(close(log_sigmoid(-50.0), -50.0, 1e-12));
        assert!(log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn positive_risks() {
        assert!(close(risk_p_plus(&[0.0, 0.0]), LN2, 1e-15));
        assert!(close(risk_p_minus(&[0.0]), LN2, 1e-15));
        assert!(close(risk_p_plus(&[2.0, -1.0]), 0.720_095, 1e-6));
        assert!(close(risk_p_minus(&[2.0, -1.0]), 1.220_095, 1e-6));
        assert!(risk_p_plus(&[1e6]) < 1e-300);
    }

    #[test]
    fn unlabeled_risks() {
        assert!(close(risk_u_pointwise(&[vec![0.0, 0.0], vec![0.0]]), LN2, 1e-15));
        assert!(close(risk_u_pointwise(&[vec![1.0]]), 1.313_262, 1e-6));
        assert!(close(risk_u_pairwise(0.7, &[0.7, 0.7]), LN2, 1e-15));
        assert!(close(risk_u_pairwise(1.0, &[0.0, 2.0]), 0.813_262, 1e-6));
        assert!(risk_u_pairwise(1e6, &[0.0]) < 1e-300);
        assert!(close(risk_star(3.0, &[3.5]), 0.974_077, 1e-6));
        assert!(close(risk_star(-2.0, &[-2.0]), LN2, 1e-15));
    }

    #[test]
    fn star_and_unlabeled_share_form() {
        let others = [0.3, -1.2, 4.0];
        assert_eq!(
            risk_star(0.9, &others).to_bits(),
            risk_u_pairwise(0.9, &others).to_bits()
        );
    }

    fn puda_scores() -> BatchScores {
        BatchScores {
            positive: vec![5.0, 4.0],
            unlabeled: vec![vec![-3.0, -2.0], vec![-4.0, -1.0]],
            synthetic: vec![vec![-5.0, -2.0], vec![-3.0, -3.0]],
        }
    }

    #[test]
    fn clamp_leaves_prior_term() {
        // Large positive scores make π_p R_p^- dominate the small pairwise risks.
        let s = puda_scores();
        let pi = 0.5;
        let r = assemble_objective(Mode::Puda, pi, &s).unwrap();
        assert!(r.r_u_minus + r.r_star_minus < pi * r.r_p_minus);
        assert!(r.clamp_active);
        assert_eq!(r.objective, pi * r.r_p_plus);
    }

    #[test]
    fn prior_domain() {
        let s = puda_scores();
        for pi in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                assemble_objective(Mode::Puda, pi, &s),
                Err(RiskError::InvalidPrior(_))
            ));
        }
        // PN and DA ignore the prior
        assert!(assemble_objective(Mode::Pn, 0.0, &s).is_ok());
        assert!(assemble_objective(Mode::Da, 0.0, &s).is_ok());
    }

    #[test]
    fn missing_components() {
        let mut s = puda_scores();
        s.synthetic.clear();
        assert!(assemble_objective(Mode::PuR, 0.1, &s).is_ok());
        assert_eq!(
            assemble_objective(Mode::Puda, 0.1, &s),
            Err(RiskError::MissingComponent {
                mode: Mode::Puda,
                component: "synthetic"
            })
        );
        s.unlabeled[1].clear();
        assert!(matches!(
            assemble_objective(Mode::Pn, 0.1, &s),
            Err(RiskError::MissingComponent {
                component: "unlabeled",
                ..
            })
        ));
    }

    #[test]
    fn pu_r_matches_hand_computation() {
        let s = BatchScores {
            positive: vec![1.0, -0.5],
            unlabeled: vec![vec![0.0, 2.0], vec![0.5, -1.5]],
            synthetic: vec![],
        };
        let pi = 0.3;
        let r = assemble_objective(Mode::PuR, pi, &s).unwrap();
        let mut ru = 0.0;
        for (p, g) in s.positive.iter().zip(&s.unlabeled) {
            for u in g {
                ru += -log_sigmoid(p - u) / 4.0;
            }
        }
        let rp_plus = (-log_sigmoid(1.0) - log_sigmoid(-0.5)) / 2.0;
        let rp_minus = (-log_sigmoid(-1.0) - log_sigmoid(0.5)) / 2.0;
        let expected = pi * rp_plus + (ru - pi * rp_minus).max(0.0);
        assert!(close(r.objective, expected, 1e-12));
    }

    #[test]
    fn pn_and_da_are_unclamped_sums() {
        let s = puda_scores();
        let pn = assemble_objective(Mode::Pn, 0.1, &s).unwrap();
        let da = assemble_objective(Mode::Da, 0.1, &s).unwrap();
        assert_eq!(pn.objective, pn.r_u_minus);
        assert_eq!(da.objective, da.r_u_minus + da.r_star_minus);
        assert!(!pn.clamp_active && !da.clamp_active);
    }

    #[test]
    fn zero_policy_clamped_gradient_is_prior_term_only() {
        let s = puda_scores();
        let pi = 0.5;
        let g = objective_score_grads(Mode::Puda, pi, &s, ClampPolicy::Zero, Player::Discriminator).unwrap();
        assert!(g.breakdown.clamp_active);
        for (gi, &si) in g.positive.iter().zip(&s.positive) {
            assert_eq!(*gi, -pi * sigmoid(-si) / 2.0);
        }
        assert!(g.unlabeled.iter().chain(&g.synthetic).flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn generator_grad_negates_discriminator_grad() {
        let s = BatchScores {
            positive: vec![0.2, -0.1],
            unlabeled: vec![vec![0.5, 1.0], vec![0.0, 0.3]],
            synthetic: vec![vec![0.4, -0.2], vec![0.9, 0.1]],
        };
        for mode in [Mode::Da, Mode::Puda] {
            let d = objective_score_grads(mode, 1e-3, &s, ClampPolicy::Zero, Player::Discriminator).unwrap();
            assert!(!d.breakdown.clamp_active);
            let g = objective_score_grads(mode, 1e-3, &s, ClampPolicy::Zero, Player::Generator).unwrap();
            assert_eq!(g.synthetic, negated_synthetic(&d));
            assert!(g.positive.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn generator_sees_clamp_only_under_zero_policy() {
        let s = puda_scores();
        let zero = objective_score_grads(Mode::Puda, 0.5, &s, ClampPolicy::Zero, Player::Generator).unwrap();
        assert!(zero.synthetic.iter().flatten().all(|&x| x == 0.0));
        let def = objective_score_grads(Mode::Puda, 0.5, &s, ClampPolicy::Defensive, Player::Generator).unwrap();
        assert!(def.synthetic.iter().flatten().all(|&x| x < 0.0));
    }

    #[test]
    fn mode_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(m.label().parse::<Mode>().unwrap(), m);
        }
        assert!("pu".parse::<Mode>().is_err());
    }
}

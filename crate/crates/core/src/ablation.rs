//! Seed-level summaries for mode comparisons and prior sweeps.

use serde::{Deserialize, Serialize};

use crate::eval::{EvalReport, HITS_AT};
use crate::risk::{ClampPolicy, Mode};
use crate::trainer::TrainConfig;

/// Prior grid for sensitivity sweeps, from 1e-1 down to 1e-7.
pub const PRIOR_GRID: [f64; 7] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p));
    let x = p * (sorted.len() - 1) as f64;
    let lo = x.floor() as usize;
    let hi = x.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (x - lo as f64)
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    quantile(&sorted(values), 0.5)
}

/// Interquartile range.
pub fn iqr(values: impl IntoIterator<Item = f64>) -> f64 {
    let v = sorted(values);
    quantile(&v, 0.75) - quantile(&v, 0.25)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: EvalReport,
}

/// All seeds of one mode, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: String,
    pub runs: Vec<SeedResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ModeRow {
    pub fn mrrs(&self) -> impl Iterator<Item = f64> + '_ {
        self.runs.iter().map(|r| r.report.mrr)
    }

    pub fn median_mrr(&self) -> Option<f64> {
        (!self.runs.is_empty()).then(|| median(self.mrrs()))
    }

    pub fn iqr_mrr(&self) -> Option<f64> {
        (!self.runs.is_empty()).then(|| iqr(self.mrrs()))
    }

    pub fn median_hits(&self, k: usize) -> Option<f64> {
        (!self.runs.is_empty()).then(|| median(self.runs.iter().map(|r| r.report.hits(k))))
    }
}

/// Plain-text comparison table: one row per mode, medians over seeds.
pub fn comparison_table(rows: &[ModeRow]) -> String {
    let mut out = format!("{:<8}{:>9}", "Mode", "MRR");
    for k in HITS_AT {
        out.push_str(&format!("{:>9}", format!("H@{k}")));
    }
    out.push_str(&format!("{:>9}\n", "IQR"));
    for row in rows {
        out.push_str(&format!("{:<8}", row.mode));
        match (row.median_mrr(), &row.error) {
            (Some(mrr), _) => {
                out.push_str(&format!("{mrr:>9.4}"));
                for k in HITS_AT {
                    out.push_str(&format!("{:>9.4}", row.median_hits(k).unwrap_or(f64::NAN)));
                }
                out.push_str(&format!("{:>9.4}", row.iqr_mrr().unwrap_or(f64::NAN)));
                if let Some(e) = &row.error {
                    out.push_str(&format!("  (partial: {e})"));
                }
            }
            (None, Some(e)) => out.push_str(&format!("  failed: {e}")),
            (None, None) => out.push_str("  no runs"),
        }
        out.push('\n');
    }
    out
}

/// The settings used for mode comparisons on the default planted graph.
pub fn planted_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        dim: 32,
        n_unlabeled: 8,
        m_synthetic: 8,
        pi_p: 0.01,
        lr_d: 0.01,
        lr_g: 0.01,
        epochs: 60,
        batch_size: 64,
        eval_every: 0,
        patience: 0,
        clamp_policy: ClampPolicy::Defensive,
        ..TrainConfig::default()
    }
}

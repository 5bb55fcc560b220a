//! Scoring and per-phase timings.

use std::time::Instant;

use serde::Serialize;

use crate::error::CliResult;
use crate::model::Predictions;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
    /// Time since the run started, at the end of this phase.
    pub elapsed: f64,
}

/// Records consecutive phases of one run.
#[derive(Debug)]
pub struct PhaseTimer {
    start: Instant,
    last: Instant,
    phases: Vec<Timing>,
}

impl Default for PhaseTimer {
    fn default() -> Self {
        let now = Instant::now();
        PhaseTimer {
            start: now,
            last: now,
            phases: Vec::new(),
        }
    }
}

impl PhaseTimer {
    pub fn mark(&mut self, phase: &str) {
        let now = Instant::now();
        self.phases.push(Timing {
            phase: phase.to_string(),
            seconds: (now - self.last).as_secs_f64(),
            elapsed: (now - self.start).as_secs_f64(),
        });
        self.last = now;
    }

    pub fn finish(self) -> Vec<Timing> {
        self.phases
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub n: usize,
    /// Mean per-point NLL in standardized units.
    pub nll: f64,
    pub rmse_standardized: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub command: &'static str,
    #[serde(flatten)]
    pub scores: Scores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    pub out_of_box: usize,
    pub timings: Vec<Timing>,
}

pub fn score(pred: &Predictions, y: &[f64]) -> CliResult<Scores> {
    let nll = pred.pointwise_nll(y)?;
    let n = y.len();
    let s = pred.output.standardizer;
    let mut se_std = 0.0;
    let mut se = 0.0;
    for (k, &v) in y.iter().enumerate() {
        let e_std = s.forward(v) - pred.output.mu_std[k];
        let e = v - pred.output.mean[k];
        se_std += e_std * e_std;
        se += e * e;
    }
    let mean = |total: f64| if n == 0 { f64::NAN } else { total / n as f64 };
    Ok(Scores {
        n,
        nll: mean(nll.iter().sum()),
        rmse_standardized: mean(se_std).sqrt(),
        rmse: mean(se).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use btgp::gp::{PredictiveOutput, Standardizer};

    fn preds(mu: Vec<f64>, s2: f64, std: Standardizer) -> Predictions {
        let m = mu.len();
        Predictions {
            output: PredictiveOutput {
                mean: mu.iter().map(|&v| std.inverse(v)).collect(),
                variance: vec![s2 * std.std * std.std; m],
                mu_std: mu,
                sigma2_std: vec![s2; m],
                out_of_box: vec![false; m],
                standardizer: std,
            },
            mixture: None,
        }
    }

    #[test]
    fn perfect_unit_variance_predictions() {
        let std = Standardizer { mean: 0.0, std: 1.0 };
        let s = score(&preds(vec![0.5, -1.0], 1.0, std), &[0.5, -1.0]).unwrap();
        assert_eq!(s.rmse, 0.0);
        assert!((s.nll - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_standardized_targets() {
        let y = [1.0, 3.0, 5.0, 7.0];
        let std = Standardizer::fit(&y).unwrap();
        let s = score(&preds(vec![0.0; 4], 1.0, std), &y).unwrap();
        assert!((s.rmse_standardized - 1.0).abs() < 1e-12);
        assert!((s.rmse - std.std).abs() < 1e-12);
    }

    #[test]
    fn timings_are_cumulative() {
        let mut t = PhaseTimer::default();
        t.mark("a");
        t.mark("b");
        let phases = t.finish();
        assert!(phases[1].elapsed >= phases[0].elapsed);
    }
}

//! Ensembles over random bit orders, mixed as a Gaussian mixture.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{PredictiveOutput, TrainingData};
use super::{gaussian_nll, nll, train, Posterior, Prediction, TrainOptions, TrainReport};
use crate::error::{Error, Result};
use crate::kernel::{phi_from_order_and_weights, KernelParams};

/// Weight given to the full-depth term by each initialization; the rest is
/// spread evenly over the other positions. `None` is uniform.
pub const WEIGHT_INITS: [Option<f64>; 3] = [None, Some(0.5), Some(0.9)];

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Random bit orders; each is paired with every entry of [`WEIGHT_INITS`].
    pub bit_orders: usize,
    /// Initializations sampled and trained.
    pub members: usize,
    pub temperature: f64,
    /// `None` uses `1 / n`.
    pub lambda: Option<f64>,
    pub train: TrainOptions,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            bit_orders: 160,
            members: 20,
            temperature: 0.01,
            lambda: None,
            train: TrainOptions::default(),
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    /// Sets the bit-order count from a total initialization budget.
    pub fn with_inits(mut self, inits: usize) -> Self {
        self.bit_orders = inits.div_ceil(WEIGHT_INITS.len()).max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub posterior: Posterior,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub data: TrainingData,
    pub members: Vec<EnsembleMember>,
    pub mixture_weights: Vec<f64>,
    pub temperature: f64,
}

/// Mixture predictions with the member outputs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrediction {
    pub output: PredictiveOutput,
    pub members: Vec<Prediction>,
    pub weights: Vec<f64>,
}

impl MixturePrediction {
    /// Per-point `−log Σ_k π_k N(y | μ_k, σ²_k)` in standardized units.
    pub fn pointwise_nll(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output.len() {
            return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), self.output.len())));
        }
        let s = self.output.standardizer;
        Ok(y
            .iter()
            .enumerate()
            .map(|(r, &v)| {
                let t = s.forward(v);
                let terms: Vec<f64> = self
                    .members
                    .iter()
                    .zip(&self.weights)
                    .map(|(m, &pi)| pi.ln() - gaussian_nll(t, m.mu[r], m.sigma2[r]))
                    .collect();
                -log_sum_exp(&terms)
            })
            .collect())
    }
}

/// Trains an ensemble: evaluates every (bit order, weight init) pair, samples
/// `members` of them by Boltzmann sampling on per-point NLL, and trains those
/// in parallel.
pub fn train_ensemble(data: TrainingData, cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    if cfg.members == 0 || cfg.bit_orders == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one member and one bit order".into()));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", cfg.temperature)));
    }
    let n = data.n() as f64;
    let lambda = cfg.lambda.unwrap_or_else(|| data.default_lambda());
    let q = data.encoding.q();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut inits = Vec::with_capacity(cfg.bit_orders * WEIGHT_INITS.len());
    for _ in 0..cfg.bit_orders {
        let mut order: Vec<usize> = (0..q).collect();
        order.shuffle(&mut rng);
        for init in WEIGHT_INITS {
            inits.push(phi_from_order_and_weights(&order, &init_weights(q, init))?);
        }
    }
    let scores: Vec<f64> = inits
        .par_iter()
        .map(|phi| {
            KernelParams::from_phi(phi, lambda)
                .and_then(|p| nll(&p, data.bits(), data.y_std()))
                .map_or(f64::NEG_INFINITY, |e| -(e.nll / n) / cfg.temperature)
        })
        .collect();
    let chosen = boltzmann_top_k(&scores, cfg.members, &mut rng);
    if chosen.is_empty() {
        return Err(Error::NonFinite("training NLL at every initialization".into()));
    }

    let trained: Vec<Option<EnsembleMember>> = chosen
        .par_iter()
        .enumerate()
        .map(|(slot, &idx)| {
            let opts = TrainOptions {
                seed: cfg.train.seed.wrapping_add(slot as u64),
                ..cfg.train.clone()
            };
            match train(data.bits(), data.y_std(), &inits[idx], lambda, &opts) {
                Ok((posterior, report)) => Some(EnsembleMember {
                    posterior,
                    report: Some(report),
                }),
                Err(e) => {
                    log::warn!("ensemble member {slot} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let members: Vec<EnsembleMember> = trained.into_iter().flatten().collect();
    if members.is_empty() {
        return Err(Error::NonFinite("every ensemble member failed to train".into()));
    }
    Ok(EnsembleModel::from_members(data, members, cfg.temperature))
}

fn init_weights(q: usize, last: Option<f64>) -> Vec<f64> {
    match last {
        Some(l) if q > 1 => {
            let mut w = vec![(1.0 - l) / (q - 1) as f64; q];
            w[q - 1] = l;
            w
        }
        _ => vec![1.0 / q as f64; q],
    }
}

/// Samples `k` indices without replacement with probability proportional to
/// `exp(score)`, via Gumbel top-k. Indices with non-finite scores are never
/// chosen.
fn boltzmann_top_k(scores: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (s - (-u.ln()).ln(), i)
        })
        .filter(|(key, _)| key.is_finite())
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

impl EnsembleModel {
    /// Mixture weights are `softmax(−(nll / n) / temperature)` over members.
    pub fn from_members(data: TrainingData, members: Vec<EnsembleMember>, temperature: f64) -> Self {
        let n = data.n() as f64;
        let scores: Vec<f64> = members.iter().map(|m| -(m.posterior.nll / n) / temperature).collect();
        let mixture_weights = softmax(&scores);
        EnsembleModel {
            data,
            members,
            mixture_weights,
            temperature,
        }
    }

    /// Rebuilds every member posterior for fixed parameters.
    pub fn from_params(data: TrainingData, params: Vec<KernelParams>, temperature: f64) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Empty("ensemble members".into()));
        }
        let members = params
            .into_iter()
            .map(|p| {
                Posterior::fit(p, data.bits(), data.y_std()).map(|posterior| EnsembleMember {
                    posterior,
                    report: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_members(data, members, temperature))
    }

    /// Member with the lowest training NLL.
    pub fn best_member(&self) -> usize {
        (0..self.members.len())
            .min_by(|&a, &b| self.members[a].posterior.nll.total_cmp(&self.members[b].posterior.nll))
            .expect("ensembles are never empty")
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<MixturePrediction> {
        ensemble_predict(self, x)
    }

    /// Prediction of one member alone.
    pub fn predict_member(&self, member: usize, x: ArrayView2<f64>) -> Result<PredictiveOutput> {
        let m = self
            .members
            .get(member)
            .ok_or_else(|| Error::InvalidArgument(format!("no member {member}")))?;
        let (pred, oob) = self.data.predict_standardized(&m.posterior, x)?;
        Ok(self.data.to_output(pred, oob))
    }

    /// As [`predict`](Self::predict) after refitting the box over the
    /// training rows and `x`.
    pub fn predict_joint_rescale(&self, x: ArrayView2<f64>) -> Result<MixturePrediction> {
        let data = self.data.rescaled_with(x)?;
        let params = self.members.iter().map(|m| m.posterior.params.clone()).collect();
        let rescaled = EnsembleModel::from_params(data, params, self.temperature)?;
        ensemble_predict(&rescaled, x)
    }
}

/// Gaussian-mixture prediction over the ensemble members.
pub fn ensemble_predict(model: &EnsembleModel, x: ArrayView2<f64>) -> Result<MixturePrediction> {
    let mut preds = Vec::with_capacity(model.members.len());
    let mut oob = Vec::new();
    for m in &model.members {
        let (p, flags) = model.data.predict_standardized(&m.posterior, x)?;
        preds.push(p);
        oob = flags;
    }
    let mixed = mix(&model.mixture_weights, &preds)?;
    Ok(MixturePrediction {
        output: model.data.to_output(mixed, oob),
        members: preds,
        weights: model.mixture_weights.clone(),
    })
}

/// Mean and variance of a Gaussian mixture, pointwise.
pub fn mix(weights: &[f64], members: &[Prediction]) -> Result<Prediction> {
    if weights.len() != members.len() || members.is_empty() {
        return Err(Error::Shape(format!("{} weights for {} members", weights.len(), members.len())));
    }
    let m = members[0].mu.len();
    if members.iter().any(|p| p.mu.len() != m || p.sigma2.len() != m) {
        return Err(Error::Shape("member predictions differ in length".into()));
    }
    let mut out = Prediction {
        mu: vec![0.0; m],
        sigma2: vec![0.0; m],
    };
    for r in 0..m {
        let mean: f64 = members.iter().zip(weights).map(|(p, &w)| w * p.mu[r]).sum();
        out.mu[r] = mean;
        out.sigma2[r] = members
            .iter()
            .zip(weights)
            .map(|(p, &w)| {
                let dev = p.mu[r] - mean;
                w * (p.sigma2[r] + dev * dev)
            })
            .sum();
    }
    Ok(out)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

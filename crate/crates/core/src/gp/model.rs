//! Trained models in original units: encoding, target standardization and
//! the cached posterior.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{gaussian_nll, predict, train, Posterior, Prediction, TrainOptions, TrainReport};
use crate::bits::BitMatrix;
use crate::encoding::{default_precision, encode_batch, fit_encoding, fit_encoding_with_extents, EncodingConfig};
use crate::error::{Error, Result};
use crate::kernel::{phi_from_order_and_weights, KernelParams, WeightVector};

/// Affine map to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    /// Population standard deviation; 1 when the targets are constant.
    pub std: f64,
}

impl Standardizer {
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("targets".into()));
        }
        if let Some(j) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target {j}")));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Standardizer { mean, std })
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Settings for [`TrainedModel::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Bits per dimension; `None` picks [`default_precision`].
    pub precision: Option<usize>,
    /// Noise variance in standardized units; `None` uses `1 / n`.
    pub lambda: Option<f64>,
    pub use_ecdf: bool,
    /// Starting `φ`; `None` starts from uniform weights in the base bit order.
    pub phi0: Option<Vec<f64>>,
    pub train: TrainOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            precision: None,
            lambda: None,
            use_ecdf: false,
            phi0: None,
            train: TrainOptions::default(),
        }
    }
}

/// Training inputs with their encoding and standardized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub encoding: EncodingConfig,
    pub standardizer: Standardizer,
    x: Array2<f64>,
    y: Vec<f64>,
    bits: BitMatrix,
    y_std: Vec<f64>,
}

impl TrainingData {
    pub fn new(x: ArrayView2<f64>, y: &[f64], precision: Option<usize>, use_ecdf: bool) -> Result<Self> {
        let p = precision.unwrap_or_else(|| default_precision(x.ncols()));
        let encoding = fit_encoding(x, p, use_ecdf)?;
        Self::with_encoding(x, y, encoding)
    }

    pub fn with_encoding(x: ArrayView2<f64>, y: &[f64], encoding: EncodingConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} feature rows for {} targets", x.nrows(), y.len())));
        }
        let standardizer = Standardizer::fit(y)?;
        let encoded = encode_batch(x, &encoding)?;
        let y_std = y.iter().map(|&v| standardizer.forward(v)).collect();
        Ok(TrainingData {
            encoding,
            standardizer,
            x: x.to_owned(),
            y: y.to_vec(),
            bits: encoded.bits,
            y_std,
        })
    }

    /// Re-encodes with extents covering both the training rows and `extra`.
    pub fn rescaled_with(&self, extra: ArrayView2<f64>) -> Result<Self> {
        let use_ecdf = self.encoding.ecdf.is_some();
        let encoding = fit_encoding_with_extents(self.x.view(), Some(extra), self.encoding.precision, use_ecdf)?;
        Self::with_encoding(self.x.view(), &self.y, encoding)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_std(&self) -> &[f64] {
        &self.y_std
    }

    pub fn bits(&self) -> &BitMatrix {
        &self.bits
    }

    pub fn default_lambda(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// `φ` for uniform weights in the base bit order.
    pub fn uniform_phi(&self) -> Vec<f64> {
        let q = self.encoding.q();
        let order: Vec<usize> = (0..q).collect();
        phi_from_order_and_weights(&order, WeightVector::uniform(q).as_slice()).expect("matching lengths")
    }

    /// Encodes query rows and predicts in standardized units.
    pub fn predict_standardized(&self, posterior: &Posterior, x: ArrayView2<f64>) -> Result<(Prediction, Vec<bool>)> {
        if x.ncols() != self.encoding.dims {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.encoding.dims,
                x.ncols()
            )));
        }
        let encoded = encode_batch(x, &self.encoding)?;
        let pred = predict(posterior, &self.bits, &encoded.bits, &encoded.out_of_box)?;
        Ok((pred, encoded.out_of_box))
    }

    pub fn to_output(&self, pred: Prediction, out_of_box: Vec<bool>) -> PredictiveOutput {
        let s = self.standardizer;
        PredictiveOutput {
            mean: pred.mu.iter().map(|&m| s.inverse(m)).collect(),
            variance: pred.sigma2.iter().map(|&v| v * s.std * s.std).collect(),
            mu_std: pred.mu,
            sigma2_std: pred.sigma2,
            out_of_box,
            standardizer: s,
        }
    }
}

/// Predictions in original target units, with the standardized values kept
/// for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveOutput {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mu_std: Vec<f64>,
    pub sigma2_std: Vec<f64>,
    pub out_of_box: Vec<bool>,
    pub standardizer: Standardizer,
}

impl PredictiveOutput {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Per-point Gaussian NLL of `y` (original units) in standardized units.
    pub fn pointwise_nll(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.len() {
            return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), self.len())));
        }
        Ok(y
            .iter()
            .zip(self.mu_std.iter().zip(&self.sigma2_std))
            .map(|(&v, (&m, &s2))| gaussian_nll(self.standardizer.forward(v), m, s2))
            .collect())
    }
}

/// A single trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub data: TrainingData,
    pub posterior: Posterior,
    /// Present when the model was optimized in this process.
    pub report: Option<TrainReport>,
}

impl TrainedModel {
    pub fn fit(x: ArrayView2<f64>, y: &[f64], cfg: &FitConfig) -> Result<Self> {
        let data = TrainingData::new(x, y, cfg.precision, cfg.use_ecdf)?;
        let lambda = cfg.lambda.unwrap_or_else(|| data.default_lambda());
        let phi0 = cfg.phi0.clone().unwrap_or_else(|| data.uniform_phi());
        let (posterior, report) = train(data.bits(), data.y_std(), &phi0, lambda, &cfg.train)?;
        Ok(TrainedModel {
            data,
            posterior,
            report: Some(report),
        })
    }

    /// Rebuilds the posterior for fixed parameters.
    pub fn from_params(data: TrainingData, params: KernelParams) -> Result<Self> {
        let posterior = Posterior::fit(params, data.bits(), data.y_std())?;
        Ok(TrainedModel {
            data,
            posterior,
            report: None,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.posterior.params
    }

    /// Training NLL in standardized units.
    pub fn train_nll(&self) -> f64 {
        self.posterior.nll
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<PredictiveOutput> {
        let (pred, oob) = self.data.predict_standardized(&self.posterior, x)?;
        Ok(self.data.to_output(pred, oob))
    }

    /// Refits the box to cover the training rows and `x`, keeps `φ` and `λ`,
    /// and predicts. No query row is out of box afterwards.
    pub fn predict_joint_rescale(&self, x: ArrayView2<f64>) -> Result<PredictiveOutput> {
        let data = self.data.rescaled_with(x)?;
        let model = TrainedModel::from_params(data, self.params().clone())?;
        model.predict(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardizer_round_trip() {
        let s = Standardizer::fit(&[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((s.mean - 3.0).abs() < 1e-15);
        assert!((s.inverse(s.forward(5.0)) - 5.0).abs() < 1e-14);
        let c = Standardizer::fit(&[4.0, 4.0]).unwrap();
        assert_eq!(c.std, 1.0);
        assert!(Standardizer::fit(&[]).is_err());
    }

    #[test]
    fn out_of_box_prediction_in_original_units() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [1.0, 3.0, 2.0, 6.0];
        let cfg = FitConfig {
            precision: Some(3),
            ..FitConfig::default()
        };
        let model = TrainedModel::fit(x.view(), &y, &cfg).unwrap();
        let out = model.predict(array![[10.0]].view()).unwrap();
        let s = model.data.standardizer;
        let lambda = model.params().lambda;
        assert!(out.out_of_box[0]);
        assert!((out.mean[0] - s.mean).abs() < 1e-12);
        assert!((out.variance[0] - (1.0 + lambda) * s.std * s.std).abs() < 1e-12);

        let joint = model.predict_joint_rescale(array![[10.0]].view()).unwrap();
        assert!(!joint.out_of_box[0]);
    }

    #[test]
    fn feature_count_is_checked() {
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let model = TrainedModel::fit(x.view(), &[0.0, 1.0], &FitConfig::default()).unwrap();
        assert!(matches!(model.predict(array![[0.5]].view()), Err(Error::Shape(_))));
    }
}

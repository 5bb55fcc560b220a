//! The binary tree kernel `k_w(a, b) = Σ_i w_i [a and b share their first i bits]`.
//!
//! Weights and bit order are driven by one unconstrained vector `φ`:
//! `θ = e^φ / ‖e^φ‖_∞`, the bit order sorts `θ` in descending order, and the
//! weights are the successive drops of the sorted `θ` down to zero.

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::encoding::build_partitions;
use crate::error::{Error, Result};
use crate::matrix::ColMatrix;
use crate::sros::{PartitionSet, SrosRect, SrosSymmetric};

/// Tolerance on `‖w‖₁ = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Two sorted `θ` entries closer than this count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidWeights(format!("entry {i} is {}", w[i])));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(WeightVector(w))
    }

    /// All weight on the full-length prefix.
    pub fn full_depth(q: usize) -> Self {
        let mut w = vec![0.0; q];
        w[q - 1] = 1.0;
        WeightVector(w)
    }

    pub fn uniform(q: usize) -> Self {
        WeightVector(vec![1.0 / q as f64; q])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Kernel between two bit strings of equal length.
pub fn kernel_value(w: &WeightVector, a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.len() != w.len() {
        return Err(Error::Shape(format!(
            "kernel_value: strings of length {} and {} with {} weights",
            a.len(),
            b.len(),
            w.len()
        )));
    }
    let shared = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    Ok(w.as_slice()[..shared].iter().sum())
}

fn weight_columns(n: usize, w: &WeightVector) -> ColMatrix {
    ColMatrix::from_fn(n, w.len(), |_, i| w.as_slice()[i])
}

/// `K_XX = L(P, C, U)` with `P` the prefix partitions of the rows,
/// `C[:, i] = w_i` and `U = 1`.
pub fn assemble_kernel(bits: &BitMatrix, w: &WeightVector) -> Result<SrosSymmetric> {
    if bits.q() != w.len() {
        return Err(Error::Shape(format!("{} bits per row but {} weights", bits.q(), w.len())));
    }
    let n = bits.rows();
    let build = build_partitions(bits);
    Ok(SrosSymmetric::new_unchecked(
        build.partitions,
        weight_columns(n, w),
        ColMatrix::filled(n, w.len(), 1.0),
    ))
}

/// Kernel pieces over the concatenation of training and test rows.
#[derive(Debug, Clone)]
pub struct JointKernelParts {
    /// `K` over all `n + m` rows.
    pub joint: SrosSymmetric,
    /// `K_XX`, the top-left `n × n` block.
    pub train: SrosSymmetric,
    /// `K_XX'`, `n × m`.
    pub cross: SrosRect,
    /// Test rows of the joint partitions, in the joint id space.
    pub test_partitions: PartitionSet,
}

pub fn assemble_joint(train: &BitMatrix, test: &BitMatrix, w: &WeightVector) -> Result<JointKernelParts> {
    if train.q() != w.len() || test.q() != w.len() {
        return Err(Error::Shape(format!(
            "train rows have {} bits, test rows {}, weights {}",
            train.q(),
            test.q(),
            w.len()
        )));
    }
    let (n, m, q) = (train.rows(), test.rows(), w.len());
    let stacked = train.vstack(test)?;
    let build = build_partitions(&stacked);
    let train_rows: Vec<usize> = (0..n).collect();
    let test_rows: Vec<usize> = (n..n + m).collect();
    let p_train = build.partitions.as_set().select_rows(&train_rows);
    let p_test = build.partitions.as_set().select_rows(&test_rows);

    let train_k = SrosSymmetric::new_unchecked(
        build.partitions.select_rows(&train_rows),
        weight_columns(n, w),
        ColMatrix::filled(n, q, 1.0),
    );
    let cross = SrosRect::new(
        p_train,
        p_test.clone(),
        weight_columns(n, w),
        ColMatrix::filled(m, q, 1.0),
    )?;
    let joint = SrosSymmetric::new_unchecked(
        build.partitions,
        weight_columns(n + m, w),
        ColMatrix::filled(n + m, q, 1.0),
    );
    Ok(JointKernelParts {
        joint,
        train: train_k,
        cross,
        test_partitions: p_test,
    })
}

/// Kernel hyperparameters derived from `φ`, plus the noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Entry `k` is the base bit placed at position `k`.
    pub bit_order: Vec<usize>,
    pub w: WeightVector,
    pub lambda: f64,
}

impl KernelParams {
    pub fn from_phi(phi: &[f64], lambda: f64) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Empty("phi".into()));
        }
        if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("phi[{i}] = {}", phi[i])));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {lambda}")));
        }
        // Shifting by the max leaves θ unchanged and keeps exp in range.
        let top = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let theta: Vec<f64> = phi.iter().map(|&v| (v - top).exp()).collect();
        let mut order: Vec<usize> = (0..phi.len()).collect();
        order.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]).then(a.cmp(&b)));
        let w = (0..order.len())
            .map(|k| {
                let next = order.get(k + 1).map_or(0.0, |&o| theta[o]);
                theta[order[k]] - next
            })
            .collect();
        Ok(KernelParams {
            phi: phi.to_vec(),
            theta,
            bit_order: order,
            w: WeightVector(w),
            lambda,
        })
    }

    pub fn q(&self) -> usize {
        self.phi.len()
    }

    /// First pair of base bits whose `θ` values tie, if any.
    pub fn tie(&self) -> Option<(usize, usize)> {
        self.bit_order
            .windows(2)
            .find(|p| self.theta[p[0]] - self.theta[p[1]] <= TIE_TOL)
            .map(|p| (p[0], p[1]))
    }
}

pub fn params_from_phi(phi: &[f64], lambda: f64) -> Result<KernelParams> {
    KernelParams::from_phi(phi, lambda)
}

/// A `φ` whose bit order is `order` and whose weights are `w`.
///
/// Zero tail weights would send `θ` to zero; those entries get a large
/// negative `φ` instead.
pub fn phi_from_order_and_weights(order: &[usize], w: &[f64]) -> Result<Vec<f64>> {
    if order.len() != w.len() {
        return Err(Error::Shape(format!("{} positions but {} weights", order.len(), w.len())));
    }
    let mut phi = vec![0.0; w.len()];
    let mut tail = 0.0;
    for k in (0..w.len()).rev() {
        tail += w[k];
        phi[order[k]] = if tail > 0.0 { tail.ln() } else { -700.0 };
    }
    Ok(phi)
}

/// Chain rule from `∂nll/∂w` (sorted positions) to `∂nll/∂φ`.
///
/// `θ` at sorted position `k` enters `w_k` with sign `+` and `w_{k-1}` with
/// sign `-`. The largest `θ` is pinned at 1, so its own `φ` acts only through
/// the normalisation of the others. Fails on tied `θ`, where the bit order
/// and hence the gradient are not defined.
pub fn grad_w_to_phi(grad_w: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    if let Some((a, b)) = params.tie() {
        return Err(Error::TiedTheta(a, b));
    }
    grad_w_to_phi_unchecked(grad_w, params)
}

/// [`grad_w_to_phi`] without the tie check: at a tie this is the one-sided
/// derivative for the current bit order.
pub fn grad_w_to_phi_unchecked(grad_w: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    let q = params.q();
    if grad_w.len() != q {
        return Err(Error::Shape(format!("{} gradient entries for {q} weights", grad_w.len())));
    }
    let order = &params.bit_order;
    let top = order[0];
    let mut grad_phi = vec![0.0; q];
    let mut top_grad = 0.0;
    for k in 1..q {
        let o = order[k];
        let g_theta = grad_w[k] - grad_w[k - 1];
        let g = g_theta * params.theta[o];
        grad_phi[o] = g;
        top_grad -= g;
    }
    grad_phi[top] = top_grad;
    Ok(grad_phi)
}

//! GP regression with the binary tree kernel.
//!
//! Targets are standardized, so the prior mean is zero. With
//! `K + λI = λ (I + L(P, C/λ, 1))`, the training inverse comes out of the
//! `O(n q)` shared-column inversion as `(K + λI)⁻¹ = λ⁻¹ I + L(P, C⁻¹, U⁻¹)`,
//! where `C⁻¹` and `U⁻¹` are just names for the SROS arrays of the inverse.

mod ensemble;
mod model;
mod optim;

pub use ensemble::{
    ensemble_predict, train_ensemble, EnsembleConfig, EnsembleMember, EnsembleModel, MixturePrediction,
    WEIGHT_INITS,
};
pub use model::{FitConfig, PredictiveOutput, Standardizer, TrainedModel, TrainingData};
pub use optim::{minimize, BfgsOptions, BfgsOutcome, StopReason};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::BitMatrix;
use crate::encoding::build_partitions;
use crate::error::{Error, Result};
use crate::kernel::{grad_w_to_phi, grad_w_to_phi_unchecked, KernelParams};
use crate::matrix::ColMatrix;
use crate::sros::{invert, invert_shared_u, lin_transform, NestedPartitionSet, PartitionSet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Magnitude of the `φ` perturbation used to split tied `θ` entries.
pub const TIE_JITTER: f64 = 1e-10;

/// Training-set quantities at one parameter setting.
#[derive(Debug, Clone)]
pub struct NllEval {
    pub nll: f64,
    /// `(K + λI)⁻¹ y`.
    pub z: Vec<f64>,
    /// `log|K + λI|`.
    pub logdet: f64,
    /// Prefix partitions of the training rows under the current bit order.
    pub partitions: NestedPartitionSet,
    pub cinv: ColMatrix,
    pub uinv: ColMatrix,
}

/// Training negative log likelihood. `bits` are in the base order; the bit
/// order of `params` is applied here.
pub fn nll(params: &KernelParams, bits: &BitMatrix, y: &[f64]) -> Result<NllEval> {
    let permuted = bits.permute_columns(&params.bit_order)?;
    let build = build_partitions(&permuted);
    nll_with_partitions(params, build.partitions, y)
}

/// [`nll`] for partitions already built under `params.bit_order`.
pub fn nll_with_partitions(params: &KernelParams, partitions: NestedPartitionSet, y: &[f64]) -> Result<NllEval> {
    let (n, q) = (partitions.n(), partitions.q());
    if y.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", y.len())));
    }
    if q != params.q() {
        return Err(Error::Shape(format!("{q} partition columns for {} weights", params.q())));
    }
    if let Some(j) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target {j}")));
    }
    let lambda = params.lambda;
    let w = params.w.as_slice();
    let scaled = ColMatrix::from_fn(n, q, |_, i| w[i] / lambda);
    let ones = vec![1.0; n];
    let inv = invert_shared_u(&partitions, &scaled, &ones)?;
    let cinv = inv.c_prime.scaled(1.0 / lambda);
    let uinv = inv.u_prime;
    let logdet = inv.logdet + n as f64 * lambda.ln();

    let cu = cinv.hadamard(&uinv);
    let mut z = lin_transform(&partitions, &partitions, &uinv, &cu, y)?;
    for (zj, &yj) in z.iter_mut().zip(y) {
        *zj += yj / lambda;
    }
    let quad: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum();
    let nll = 0.5 * (quad + logdet + n as f64 * LN_2PI);
    Ok(NllEval {
        nll,
        z,
        logdet,
        partitions,
        cinv,
        uinv,
    })
}

/// `∂nll/∂w_i = ½ (−zᵀ L(P_i, 1, 1) z + Tr[L(P_i, 1, 1) (K + λI)⁻¹])`, `O(n q²)`.
///
/// The trace splits into the identity part, `n / λ`, and one term per column
/// `j` of the inverse. Each term reduces to a signed cell-sum over the finer
/// of partitions `i` and `j`; the terms with `j > i` do not depend on `i` and
/// are shared through a suffix sum. Rows are visited in an order where every
/// cell is a contiguous run, so each cell-sum is a sequential scan.
pub fn nll_grad_w(eval: &NllEval, lambda: f64) -> Vec<f64> {
    let p = &eval.partitions;
    let (n, q) = (p.n(), p.q());
    let order = contiguous_order(p);
    let gather = |v: &[f64]| -> Vec<f64> { order.iter().map(|&r| v[r]).collect() };
    let cinv: Vec<Vec<f64>> = (0..q).map(|j| gather(eval.cinv.col(j))).collect();
    let uinv: Vec<Vec<f64>> = (0..q).map(|j| gather(eval.uinv.col(j))).collect();
    let z = gather(&eval.z);
    let runs: Vec<Vec<usize>> = (0..q)
        .map(|i| {
            let col = p.column(i);
            let mut ends: Vec<usize> = (1..n).filter(|&k| col[order[k]] != col[order[k - 1]]).collect();
            ends.push(n);
            ends
        })
        .collect();

    let own: Vec<f64> = (0..q).map(|j| run_trace(&runs[j], &cinv[j], &uinv[j])).collect();
    let mut suffix = vec![0.0; q + 1];
    for j in (0..q).rev() {
        suffix[j] = suffix[j + 1] + own[j];
    }

    let identity_part = n as f64 / lambda;
    (0..q)
        .map(|i| {
            let quad: f64 = cell_sums(&runs[i], &z).map(|s| s * s).sum();
            let mut trace = identity_part + suffix[i + 1] + own[i];
            for j in 0..i {
                trace += run_trace(&runs[i], &cinv[j], &uinv[j]);
            }
            0.5 * (trace - quad)
        })
        .collect()
}

/// `Σ_l c^{(l)} (Σ_{k∈l} u_k)²` over cells given as contiguous runs.
fn run_trace(ends: &[usize], c: &[f64], u: &[f64]) -> f64 {
    let mut start = 0;
    let mut acc = 0.0;
    for &end in ends {
        let s: f64 = u[start..end].iter().sum();
        acc += c[start] * s * s;
        start = end;
    }
    acc
}

fn cell_sums<'a>(ends: &'a [usize], v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    let mut start = 0;
    ends.iter().map(move |&end| {
        let s = v[start..end].iter().sum();
        start = end;
        s
    })
}

/// A row order in which every cell of every column is a contiguous run.
///
/// Column by column, cells are relabelled in order of first appearance along
/// the current order and the rows stably regrouped by label. Children of an
/// earlier cell receive smaller labels, so coarser runs survive the regrouping.
fn contiguous_order(p: &PartitionSet) -> Vec<usize> {
    let n = p.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut next = vec![0usize; n];
    let mut keys = vec![0u32; n];
    let mut label = vec![u32::MAX; p.max_bound()];
    for i in 0..p.q() {
        let col = p.column(i);
        label[..p.bound(i)].fill(u32::MAX);
        let mut cells = 0u32;
        for (key, &row) in keys.iter_mut().zip(&order) {
            let slot = &mut label[col[row] as usize];
            if *slot == u32::MAX {
                *slot = cells;
                cells += 1;
            }
            *key = *slot;
        }
        let mut start = vec![0usize; cells as usize + 1];
        for &k in &keys {
            start[k as usize + 1] += 1;
        }
        for k in 1..start.len() {
            start[k] += start[k - 1];
        }
        for (&k, &row) in keys.iter().zip(&order) {
            next[start[k as usize]] = row;
            start[k as usize] += 1;
        }
        std::mem::swap(&mut order, &mut next);
    }
    order
}

/// NLL and its gradient with respect to `φ`.
///
/// At tied `θ` the tied entries of `φ` are nudged by `±TIE_JITTER` (seeded)
/// before differentiating; the returned flag records that this happened.
pub fn nll_grad_phi(phi: &[f64], lambda: f64, bits: &BitMatrix, y: &[f64], seed: u64) -> Result<(f64, Vec<f64>, bool)> {
    let params = KernelParams::from_phi(phi, lambda)?;
    let (params, jittered) = match params.tie() {
        None => (params, false),
        Some(_) => (KernelParams::from_phi(&jitter_ties(&params, seed), lambda)?, true),
    };
    let eval = nll(&params, bits, y)?;
    let grad_w = nll_grad_w(&eval, lambda);
    let grad = match grad_w_to_phi(&grad_w, &params) {
        Ok(g) => g,
        // Ties that survive the jitter come from θ underflowing to zero, where
        // the derivative of θ itself vanishes.
        Err(Error::TiedTheta(..)) => grad_w_to_phi_unchecked(&grad_w, &params)?,
        Err(e) => return Err(e),
    };
    Ok((eval.nll, grad, jittered))
}

fn jitter_ties(params: &KernelParams, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = params.phi.clone();
    let order = &params.bit_order;
    for k in 0..order.len() {
        let tied_prev = k > 0 && params.theta[order[k - 1]] - params.theta[order[k]] <= crate::kernel::TIE_TOL;
        let tied_next =
            k + 1 < order.len() && params.theta[order[k]] - params.theta[order[k + 1]] <= crate::kernel::TIE_TOL;
        if tied_prev || tied_next {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            phi[order[k]] += sign * TIE_JITTER * rng.gen_range(0.5..1.0);
        }
    }
    phi
}

/// Cached posterior for one set of kernel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub params: KernelParams,
    pub z: Vec<f64>,
    pub cinv: ColMatrix,
    pub uinv: ColMatrix,
    pub logdet: f64,
    pub nll: f64,
}

impl Posterior {
    pub fn from_eval(params: KernelParams, eval: NllEval) -> Self {
        Posterior {
            params,
            z: eval.z,
            cinv: eval.cinv,
            uinv: eval.uinv,
            logdet: eval.logdet,
            nll: eval.nll,
        }
    }

    pub fn fit(params: KernelParams, bits: &BitMatrix, y: &[f64]) -> Result<Self> {
        let eval = nll(&params, bits, y)?;
        Ok(Self::from_eval(params, eval))
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
}

/// Predictive means and variances in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// Posterior predictive at the test rows.
///
/// Means come from `K_X'X z`. Variances use the joint matrix over training and
/// test rows: the test block of `(K̃ + λI)⁻¹` is the predictive precision, and
/// inverting that block (again in SROS form) gives the covariance, whose
/// diagonal is read off directly. Out-of-box rows get the prior, `μ = 0` and
/// `σ² = k(x, x) + λ`.
pub fn predict(posterior: &Posterior, train_bits: &BitMatrix, test_bits: &BitMatrix, out_of_box: &[bool]) -> Result<Prediction> {
    let params = &posterior.params;
    let (n, q) = (train_bits.rows(), params.q());
    if train_bits.q() != q || test_bits.q() != q {
        return Err(Error::Shape(format!(
            "model has {q} bits, training rows {}, test rows {}",
            train_bits.q(),
            test_bits.q()
        )));
    }
    if posterior.z.len() != n {
        return Err(Error::Shape(format!("posterior has {} rows, training bits {n}", posterior.z.len())));
    }
    if out_of_box.len() != test_bits.rows() {
        return Err(Error::Shape(format!(
            "{} out-of-box flags for {} test rows",
            out_of_box.len(),
            test_bits.rows()
        )));
    }
    let lambda = params.lambda;
    let prior_var = params.w.as_slice().iter().sum::<f64>() + lambda;
    let mut out = Prediction {
        mu: vec![0.0; test_bits.rows()],
        sigma2: vec![prior_var; test_bits.rows()],
    };
    let inside: Vec<usize> = (0..test_bits.rows()).filter(|&r| !out_of_box[r]).collect();
    if inside.is_empty() {
        return Ok(out);
    }
    let m = inside.len();
    let w = params.w.as_slice();

    let train_p = train_bits.permute_columns(&params.bit_order)?;
    let test_p = test_bits.select_rows(&inside).permute_columns(&params.bit_order)?;
    let joint = build_partitions(&train_p.vstack(&test_p)?).partitions;
    let train_rows: Vec<usize> = (0..n).collect();
    let test_rows: Vec<usize> = (n..n + m).collect();

    // Means: L(P'', P, 1, C) z.
    let p_train = joint.as_set().select_rows(&train_rows);
    let p_test = joint.as_set().select_rows(&test_rows);
    let mu = lin_transform(
        &p_test,
        &p_train,
        &ColMatrix::filled(m, q, 1.0),
        &ColMatrix::from_fn(n, q, |_, i| w[i]),
        &posterior.z,
    )?;

    // Variances through the test block of the joint inverse.
    let total = n + m;
    let scaled = ColMatrix::from_fn(total, q, |_, i| w[i] / lambda);
    let joint_inv = invert_shared_u(&joint, &scaled, &vec![1.0; total])?;
    let test_p = joint.select_rows(&test_rows);
    let c_prec = joint_inv.c_prime.select_rows(&test_rows);
    let u_prec = joint_inv.u_prime.select_rows(&test_rows);
    let cov = invert(&test_p, &c_prec, &u_prec)?;
    for (slot, &r) in inside.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..q {
            let u = cov.u_prime.get(slot, i);
            acc += cov.c_prime.get(slot, i) * u * u;
        }
        out.mu[r] = mu[slot];
        out.sigma2[r] = lambda * (1.0 + acc);
    }
    Ok(out)
}

/// Gaussian negative log density of `y` under `N(mu, sigma2)`.
pub fn gaussian_nll(y: f64, mu: f64, sigma2: f64) -> f64 {
    0.5 * (LN_2PI + sigma2.ln() + (y - mu) * (y - mu) / sigma2)
}

/// Stopping rules and line-search constants for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Seeds the tie-breaking jitter.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iters: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub stop: StopReason,
    /// NLL at the start and after every accepted step.
    pub nll_history: Vec<f64>,
    pub loss_evals: usize,
    pub grad_evals: usize,
    /// Gradient evaluations that needed the tie jitter.
    pub tie_jitters: usize,
}

/// Minimizes the training NLL over `φ` with BFGS. The line search evaluates
/// only the loss; gradients are computed at accepted points.
pub fn train(bits: &BitMatrix, y: &[f64], phi0: &[f64], lambda: f64, opts: &TrainOptions) -> Result<(Posterior, TrainReport)> {
    if bits.rows() != y.len() {
        return Err(Error::Shape(format!("{} bit rows for {} targets", bits.rows(), y.len())));
    }
    if phi0.len() != bits.q() {
        return Err(Error::Shape(format!("phi0 has {} entries, rows have {} bits", phi0.len(), bits.q())));
    }
    if let Some(j) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target {j}")));
    }
    // Surface structural errors before optimizing.
    KernelParams::from_phi(phi0, lambda)?;

    let mut jitters = 0usize;
    let mut grad_calls = 0u64;
    let loss = |phi: &[f64]| -> Option<f64> {
        let params = KernelParams::from_phi(phi, lambda).ok()?;
        nll(&params, bits, y).ok().map(|e| e.nll).filter(|v| v.is_finite())
    };
    let loss_grad = |phi: &[f64]| -> Option<(f64, Vec<f64>)> {
        grad_calls += 1;
        let seed = opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(grad_calls);
        let (f, g, jittered) = nll_grad_phi(phi, lambda, bits, y, seed).ok()?;
        if jittered {
            jitters += 1;
        }
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    };
    let bfgs = BfgsOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        rel_tol: opts.rel_tol,
        c1: opts.c1,
        c2: opts.c2,
    };
    let outcome = minimize(loss, loss_grad, phi0, &bfgs);
    let report = TrainReport {
        iterations: outcome.iterations,
        stop: outcome.stop,
        nll_history: outcome.history.clone(),
        loss_evals: outcome.loss_evals,
        grad_evals: outcome.grad_evals,
        tie_jitters: jitters,
    };
    if outcome.stop == StopReason::Diverged && outcome.history.is_empty() {
        return Err(Error::NonFinite("training NLL at the initial parameters".into()));
    }
    if outcome.stop == StopReason::Diverged {
        log::warn!("optimizer produced a non-finite NLL; keeping the best iterate");
    }
    let params = KernelParams::from_phi(&outcome.x, lambda)?;
    let posterior = Posterior::fit(params, bits, y)?;
    Ok((posterior, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::WeightVector;

    fn params_for(w: &[f64], lambda: f64) -> KernelParams {
        let order: Vec<usize> = (0..w.len()).collect();
        let phi = crate::kernel::phi_from_order_and_weights(&order, w).unwrap();
        KernelParams::from_phi(&phi, lambda).unwrap()
    }

    #[test]
    fn scalar_nll() {
        let bits = BitMatrix::from_strs(&["1"]).unwrap();
        let p = KernelParams::from_phi(&[0.0], 1.0).unwrap();
        let e = nll(&p, &bits, &[0.0]).unwrap();
        let expected = 0.5 * (2f64.ln() + LN_2PI);
        assert!((e.nll - expected).abs() < 1e-14);
        assert!((e.nll - 1.2655).abs() < 1e-4);
    }

    #[test]
    fn full_depth_weights_on_distinct_rows_give_independent_terms() {
        let bits = BitMatrix::from_strs(&["00", "01", "10", "11"]).unwrap();
        let lambda = 0.25;
        let mut p = KernelParams::from_phi(&[0.0, -1.0], lambda).unwrap();
        p.w = WeightVector::full_depth(2);
        p.bit_order = vec![0, 1];
        let y = [0.3, -1.2, 0.8, 2.0];
        let e = nll(&p, &bits, &y).unwrap();
        let expected: f64 = y.iter().map(|&v| gaussian_nll(v, 0.0, 1.0 + lambda)).sum();
        assert!((e.nll - expected).abs() < 1e-12);
    }

    #[test]
    fn scalar_gradient() {
        // One point, q = 1: nll = ½ (y² / (w + λ) + log(w + λ) + log 2π).
        let bits = BitMatrix::from_strs(&["0"]).unwrap();
        let (y, lambda) = (1.7, 0.3);
        let p = KernelParams::from_phi(&[0.0], lambda).unwrap();
        let e = nll(&p, &bits, &[y]).unwrap();
        let g = nll_grad_w(&e, lambda);
        let s = 1.0 + lambda;
        let expected = 0.5 * (-y * y / (s * s) + 1.0 / s);
        assert!((g[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn single_point_prediction() {
        let bits = BitMatrix::from_strs(&["101"]).unwrap();
        let (y, lambda) = (0.9, 0.2);
        let p = params_for(&[0.2, 0.3, 0.5], lambda);
        let post = Posterior::fit(p, &bits, &[y]).unwrap();
        let pred = predict(&post, &bits, &bits, &[false]).unwrap();
        assert!((pred.mu[0] - y / (1.0 + lambda)).abs() < 1e-14);
        let var = 1.0 - 1.0 / (1.0 + lambda) + lambda;
        assert!((pred.sigma2[0] - var).abs() < 1e-14);
    }

    #[test]
    fn out_of_box_rows_get_the_prior() {
        let bits = BitMatrix::from_strs(&["00", "11"]).unwrap();
        let lambda = 0.1;
        let post = Posterior::fit(params_for(&[0.5, 0.5], lambda), &bits, &[1.0, -1.0]).unwrap();
        let test = BitMatrix::from_strs(&["00", "11"]).unwrap();
        let pred = predict(&post, &bits, &test, &[true, false]).unwrap();
        assert_eq!(pred.mu[0], 0.0);
        assert!((pred.sigma2[0] - (1.0 + lambda)).abs() < 1e-15);
        assert!(pred.mu[1] < 0.0);
        let none = predict(&post, &bits, &BitMatrix::zeros(0, 2), &[]).unwrap();
        assert!(none.mu.is_empty());
    }

    #[test]
    fn prediction_shape_errors() {
        let bits = BitMatrix::from_strs(&["00", "11"]).unwrap();
        let post = Posterior::fit(params_for(&[0.5, 0.5], 0.1), &bits, &[1.0, -1.0]).unwrap();
        let wrong = BitMatrix::from_strs(&["000"]).unwrap();
        assert!(matches!(predict(&post, &bits, &wrong, &[false]), Err(Error::Shape(_))));
        assert!(predict(&post, &bits, &bits, &[false]).is_err());
    }

    #[test]
    fn one_bit_problem_converges_immediately() {
        let bits = BitMatrix::from_strs(&["0", "1", "1"]).unwrap();
        let (post, report) = train(&bits, &[0.1, -0.5, 0.4], &[0.0], 0.3, &TrainOptions::default()).unwrap();
        assert!(report.iterations <= 1);
        assert_eq!(post.params.w.as_slice(), &[1.0]);
    }

    #[test]
    fn contiguous_order_groups_every_column() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 1, 0, 1, 0, 2], vec![0, 1, 2, 3, 0, 4], vec![0, 1, 2, 3, 4, 5]])
            .unwrap();
        let order = contiguous_order(&p);
        for i in 0..p.q() {
            let ids: Vec<u32> = order.iter().map(|&r| p.column(i)[r]).collect();
            let mut seen = std::collections::HashSet::new();
            for (k, id) in ids.iter().enumerate() {
                if k == 0 || ids[k - 1] != *id {
                    assert!(seen.insert(*id), "column {i}: {ids:?}");
                }
            }
        }
    }

    #[test]
    fn nll_rejects_non_finite_targets() {
        let bits = BitMatrix::from_strs(&["0", "1"]).unwrap();
        let p = KernelParams::from_phi(&[0.0], 1.0).unwrap();
        assert!(matches!(nll(&p, &bits, &[0.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(nll(&p, &bits, &[0.0]), Err(Error::Shape(_))));
    }
}

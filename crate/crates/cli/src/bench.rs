//! Wall-clock scaling of the main phases on synthetic data.

use std::time::Instant;

use btgp::bits::BitMatrix;
use btgp::encoding::{build_partitions, encode_batch, fit_encoding};
use btgp::gp::{nll, nll_grad_w, predict, Posterior};
use btgp::kernel::{phi_from_order_and_weights, KernelParams, WeightVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub log2_sizes: Vec<u32>,
    pub dims: usize,
    pub precision: usize,
    /// Test points per training point.
    pub test_ratio: f64,
    /// Each timing is the minimum over this many runs.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            log2_sizes: (10..=17).collect(),
            dims: 2,
            precision: 8,
            test_ratio: 0.25,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub q: usize,
    pub encode_s: f64,
    pub nll_s: f64,
    pub grad_s: f64,
    pub predict_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes {
    pub encode: f64,
    pub nll: f64,
    pub grad: f64,
    pub predict: f64,
    pub nll_plus_predict: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QScaling {
    pub n: usize,
    pub q: usize,
    pub nll_ratio: f64,
    pub grad_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub command: &'static str,
    pub rows: Vec<BenchRow>,
    /// Log-log slopes of time against `n`.
    pub slopes: Slopes,
    /// Time ratios from `q` to `2q` at the largest `n`.
    pub q_doubling: QScaling,
}

struct Problem {
    x: Array2<f64>,
    y: Vec<f64>,
    x_test: Array2<f64>,
}

fn synthetic(n: usize, m: usize, d: usize, rng: &mut impl Rng) -> Problem {
    let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0));
    let x_test = Array2::from_shape_fn((m, d), |_| rng.gen_range(0.0..1.0));
    let y = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| (6.0f64 * v).sin()).sum::<f64>() + 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    Problem { x, y, x_test }
}

fn min_time(repeats: usize, mut f: impl FnMut()) -> f64 {
    (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Times one problem size.
pub fn time_size(n: usize, dims: usize, precision: usize, cfg: &BenchConfig) -> CliResult<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
    let m = ((n as f64) * cfg.test_ratio).round() as usize;
    let prob = synthetic(n, m, dims, &mut rng);
    let enc = fit_encoding(prob.x.view(), precision, false)?;
    let q = enc.q();

    let mut bits = BitMatrix::zeros(0, q);
    let encode_s = min_time(cfg.repeats, || {
        bits = encode_batch(prob.x.view(), &enc).expect("finite synthetic data").bits;
        std::hint::black_box(build_partitions(&bits));
    });
    let order: Vec<usize> = (0..q).collect();
    let phi = phi_from_order_and_weights(&order, WeightVector::uniform(q).as_slice())?;
    let params = KernelParams::from_phi(&phi, 1.0 / n as f64)?;
    let mut eval = None;
    let nll_s = min_time(cfg.repeats, || {
        eval = Some(nll(&params, &bits, &prob.y).expect("positive definite"));
    });
    let eval = eval.expect("at least one run");
    let grad_s = min_time(cfg.repeats, || {
        std::hint::black_box(nll_grad_w(&eval, params.lambda));
    });
    let post = Posterior::from_eval(params, eval);
    let test = encode_batch(prob.x_test.view(), &enc)?;
    let predict_s = min_time(cfg.repeats, || {
        std::hint::black_box(predict(&post, &bits, &test.bits, &test.out_of_box).expect("positive definite"));
    });
    Ok(BenchRow {
        n,
        q,
        encode_s,
        nll_s,
        grad_s,
        predict_s,
    })
}

/// Least-squares slope of `log t` against `log n`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.max(1e-12).ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn run_bench(cfg: &BenchConfig) -> CliResult<BenchReport> {
    let rows = cfg
        .log2_sizes
        .iter()
        .map(|&k| time_size(1usize << k, cfg.dims, cfg.precision, cfg))
        .collect::<CliResult<Vec<_>>>()?;
    let slope = |f: &dyn Fn(&BenchRow) -> f64| log_log_slope(&rows.iter().map(|r| (r.n as f64, f(r))).collect::<Vec<_>>());
    let slopes = Slopes {
        encode: slope(&|r| r.encode_s),
        nll: slope(&|r| r.nll_s),
        grad: slope(&|r| r.grad_s),
        predict: slope(&|r| r.predict_s),
        nll_plus_predict: slope(&|r| r.nll_s + r.predict_s),
    };
    let base = rows.last().cloned().expect("at least one size");
    let doubled = time_size(base.n, cfg.dims, 2 * cfg.precision, cfg)?;
    Ok(BenchReport {
        command: "bench",
        q_doubling: QScaling {
            n: base.n,
            q: base.q,
            nll_ratio: doubled.nll_s / base.nll_s,
            grad_ratio: doubled.grad_s / base.grad_s,
        },
        rows,
        slopes,
    })
}

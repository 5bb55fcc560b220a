#![allow(dead_code)]

use btgp::bits::BitMatrix;
use btgp::kernel::WeightVector;
use btgp::matrix::ColMatrix;
use btgp::sros::{NestedPartitionSet, Partition, PartitionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nested partitions built by splitting every cell of the previous column into
/// up to `branch` random pieces.
pub fn random_nested(rng: &mut impl Rng, n: usize, q: usize, branch: u32) -> NestedPartitionSet {
    let mut columns: Vec<Vec<u32>> = Vec::with_capacity(q);
    let mut prev = vec![0u32; n];
    for _ in 0..q {
        let raw: Vec<u32> = prev.iter().map(|&id| id * branch + rng.gen_range(0..branch)).collect();
        let col = Partition::new(&raw).ids().to_vec();
        prev = col.clone();
        columns.push(col);
    }
    NestedPartitionSet::from_columns(&columns).expect("nested by construction")
}

/// Cell-constant values for every column of `p`.
pub fn cell_constant(rng: &mut impl Rng, p: &PartitionSet, lo: f64, hi: f64) -> ColMatrix {
    let mut c = ColMatrix::zeros(p.n(), p.q());
    for i in 0..p.q() {
        let table: Vec<f64> = (0..p.bound(i)).map(|_| rng.gen_range(lo..hi)).collect();
        for (j, &id) in p.column(i).iter().enumerate() {
            c.set(j, i, table[id as usize]);
        }
    }
    c
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> ColMatrix {
    ColMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Rows drawn from a small pool so that prefixes are often shared.
pub fn random_bits(rng: &mut impl Rng, n: usize, q: usize) -> BitMatrix {
    let pool = (n / 2).max(1);
    let base: Vec<Vec<u8>> = (0..pool).map(|_| (0..q).map(|_| rng.gen_range(0..2u8)).collect()).collect();
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let mut r = base[rng.gen_range(0..pool)].clone();
            let flip = rng.gen_range(0..=q);
            for b in r.iter_mut().skip(flip) {
                *b = rng.gen_range(0..2u8);
            }
            r
        })
        .collect();
    BitMatrix::from_rows(&rows).unwrap()
}

/// Random point on the simplex with some exact zeros.
pub fn random_weights(rng: &mut impl Rng, q: usize) -> WeightVector {
    let mut w: Vec<f64> = (0..q)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.01..1.0) })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[q - 1] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    WeightVector::new(w).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    max_abs_diff(a, b) / scale
}

/// Property-test settings with a fixed RNG seed, so runs are reproducible.
pub fn config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5EED_B17),
        ..proptest::test_runner::Config::default()
    }
}

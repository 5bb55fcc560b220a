//! Real-valued features to bit strings, and bit strings to nested partitions.
//!
//! Each coordinate is rescaled into `[0, 1]` using the training extents
//! (optionally after a per-dimension ECDF transform), expanded to its first
//! `p` binary digits, and the `d · p` digits are permuted by a fixed bit
//! order. The default order interleaves dimensions by significance: the
//! leading digit of every dimension, then the second digit of every
//! dimension, and so on.

use std::collections::HashSet;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bits::{lcp_words, BitMatrix};
use crate::error::{Error, Result};
use crate::sros::{NestedPartitionSet, PartitionSet};

pub const MAX_PRECISION: usize = 32;

/// Number of knots of the ECDF transform (the 0th, 10th, ..., 100th percentiles).
pub const ECDF_KNOTS: usize = 11;

/// `min(8, ⌊150 / d⌋ + 1)` bits per dimension.
pub fn default_precision(d: usize) -> usize {
    (150 / d.max(1) + 1).min(8)
}

/// Dimension-interleaved bit order. Entry `k` is the dimension-major index
/// (`dim * p + digit`) of the bit placed at position `k`.
pub fn interleaved_order(d: usize, p: usize) -> Vec<usize> {
    (0..p).flat_map(|t| (0..d).map(move |k| k * p + t)).collect()
}

/// Piecewise-linear map sending the `10j`-th percentile of the training
/// values to `j / 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    knots: [f64; ECDF_KNOTS],
}

impl Ecdf {
    /// Percentiles use linear interpolation between order statistics.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("ecdf needs at least one value".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let last = (sorted.len() - 1) as f64;
        let mut knots = [0.0; ECDF_KNOTS];
        for (j, knot) in knots.iter_mut().enumerate() {
            let h = last * j as f64 / (ECDF_KNOTS - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            *knot = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
        }
        Ok(Ecdf { knots })
    }

    pub fn from_knots(knots: [f64; ECDF_KNOTS]) -> Result<Self> {
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidArgument("ecdf knots must be nondecreasing".into()));
        }
        Ok(Ecdf { knots })
    }

    pub fn knots(&self) -> &[f64; ECDF_KNOTS] {
        &self.knots
    }

    /// Nondecreasing, and strictly increasing between distinct knots. A value
    /// equal to a run of repeated knots maps to the middle of their targets.
    /// Values outside the knot range are extrapolated linearly.
    pub fn apply(&self, x: f64) -> f64 {
        let k = &self.knots;
        let step = 1.0 / (ECDF_KNOTS - 1) as f64;
        let lo = k.partition_point(|&v| v < x);
        let hi = k.partition_point(|&v| v <= x);
        if hi > lo {
            return (lo + hi - 1) as f64 * 0.5 * step;
        }
        if lo == 0 {
            return -(k[0] - x) * self.end_slope(true);
        }
        if lo == ECDF_KNOTS {
            return 1.0 + (x - k[ECDF_KNOTS - 1]) * self.end_slope(false);
        }
        let (a, b) = (k[lo - 1], k[lo]);
        ((lo - 1) as f64 + (x - a) / (b - a)) * step
    }

    fn end_slope(&self, low: bool) -> f64 {
        let step = 1.0 / (ECDF_KNOTS - 1) as f64;
        let segs: Vec<f64> = self.knots.windows(2).map(|w| w[1] - w[0]).collect();
        let width = if low {
            segs.iter().find(|&&s| s > 0.0)
        } else {
            segs.iter().rev().find(|&&s| s > 0.0)
        };
        width.map_or(1.0, |w| step / w)
    }
}

/// Everything needed to turn a feature vector into bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub dims: usize,
    pub precision: usize,
    /// Entry `k` is the dimension-major bit index placed at position `k`.
    pub bit_order: Vec<usize>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Constant training dimensions; they encode to 0.5 and carry no signal.
    pub degenerate: Vec<bool>,
    pub ecdf: Option<Vec<Ecdf>>,
}

impl EncodingConfig {
    pub fn q(&self) -> usize {
        self.dims * self.precision
    }

    pub fn has_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    fn transform(&self, k: usize, v: f64) -> f64 {
        match &self.ecdf {
            Some(e) => e[k].apply(v),
            None => v,
        }
    }
}

/// Bits for a batch of points, with the points falling outside the training box.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub bits: BitMatrix,
    pub out_of_box: Vec<bool>,
}

/// Learns the rescaling (and optionally ECDF) from training features.
pub fn fit_encoding(x_train: ArrayView2<f64>, precision: usize, use_ecdf: bool) -> Result<EncodingConfig> {
    fit_encoding_with_extents(x_train, None, precision, use_ecdf)
}

/// As [`fit_encoding`], but the bounding box also covers `extra` rows (for
/// rescaling over train and test points together). ECDF knots still come
/// from the training rows only.
pub fn fit_encoding_with_extents(
    x_train: ArrayView2<f64>,
    extra: Option<ArrayView2<f64>>,
    precision: usize,
    use_ecdf: bool,
) -> Result<EncodingConfig> {
    let (n, d) = x_train.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty(format!("training features are {n}×{d}")));
    }
    if !(1..=MAX_PRECISION).contains(&precision) {
        return Err(Error::InvalidArgument(format!(
            "precision must be in 1..={MAX_PRECISION}, got {precision}"
        )));
    }
    check_finite(x_train, "training features")?;
    if let Some(e) = extra {
        if e.ncols() != d {
            return Err(Error::Shape(format!("extra rows have {} columns, expected {d}", e.ncols())));
        }
        check_finite(e, "extent features")?;
    }

    let ecdf = if use_ecdf {
        let fits: Result<Vec<Ecdf>> = (0..d).map(|k| Ecdf::fit(&x_train.column(k).to_vec())).collect();
        Some(fits?)
    } else {
        None
    };
    let mut cfg = EncodingConfig {
        dims: d,
        precision,
        bit_order: interleaved_order(d, precision),
        min: vec![f64::INFINITY; d],
        max: vec![f64::NEG_INFINITY; d],
        degenerate: vec![false; d],
        ecdf,
    };
    let widen = |rows: ArrayView2<f64>, cfg: &mut EncodingConfig| {
        for row in rows.rows() {
            for (k, &v) in row.iter().enumerate() {
                let t = cfg.transform(k, v);
                cfg.min[k] = cfg.min[k].min(t);
                cfg.max[k] = cfg.max[k].max(t);
            }
        }
    };
    widen(x_train, &mut cfg);
    if let Some(e) = extra {
        widen(e, &mut cfg);
    }
    for k in 0..d {
        cfg.degenerate[k] = cfg.max[k] == cfg.min[k];
    }
    Ok(cfg)
}

fn check_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    for (r, row) in x.rows().into_iter().enumerate() {
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what}: row {r}, column {k}")));
        }
    }
    Ok(())
}

/// Encodes one point. Returns its `q` bits and whether any coordinate left
/// the training box; such coordinates are clamped before expansion.
pub fn encode(x: &[f64], cfg: &EncodingConfig) -> Result<(Vec<u8>, bool)> {
    let mut bits = BitMatrix::zeros(1, cfg.q());
    let oob = encode_into(ArrayView1::from(x), cfg, &mut bits, 0)?;
    Ok((bits.row_bits(0), oob))
}

pub fn encode_batch(x: ArrayView2<f64>, cfg: &EncodingConfig) -> Result<EncodedDataset> {
    let mut bits = BitMatrix::zeros(x.nrows(), cfg.q());
    let mut out_of_box = Vec::with_capacity(x.nrows());
    for (r, row) in x.rows().into_iter().enumerate() {
        out_of_box.push(encode_into(row, cfg, &mut bits, r)?);
    }
    Ok(EncodedDataset { bits, out_of_box })
}

fn encode_into(x: ArrayView1<f64>, cfg: &EncodingConfig, out: &mut BitMatrix, row: usize) -> Result<bool> {
    if x.len() != cfg.dims {
        return Err(Error::Shape(format!("point has {} coordinates, expected {}", x.len(), cfg.dims)));
    }
    let p = cfg.precision;
    let top = (1u64 << p) - 1;
    let mut codes = Vec::with_capacity(cfg.dims);
    let mut oob = false;
    for (k, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("coordinate {k} of row {row}")));
        }
        let t = cfg.transform(k, v);
        if t < cfg.min[k] || t > cfg.max[k] {
            oob = true;
        }
        let scaled = if cfg.degenerate[k] {
            0.5
        } else {
            ((t - cfg.min[k]) / (cfg.max[k] - cfg.min[k])).clamp(0.0, 1.0)
        };
        // The first p binary digits of `scaled`; 1.0 clamps to all ones.
        let code = ((scaled * (1u64 << p) as f64).floor() as u64).min(top);
        codes.push(code);
    }
    for (pos, &src) in cfg.bit_order.iter().enumerate() {
        let (k, t) = (src / p, src % p);
        if (codes[k] >> (p - 1 - t)) & 1 == 1 {
            out.set(row, pos, true);
        }
    }
    Ok(oob)
}

/// Nested partitions of the rows by common prefix, and the sort that built them.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionBuild {
    /// Column `i` groups rows whose first `i + 1` bits agree.
    pub partitions: NestedPartitionSet,
    /// `sort_order[s]` is the original row at sorted position `s`.
    pub sort_order: Vec<usize>,
}

impl PartitionBuild {
    /// Ids in sorted row order: the number of distinct prefixes seen so far,
    /// minus one.
    pub fn sorted_ids(&self) -> PartitionSet {
        self.partitions.as_set().select_rows(&self.sort_order)
    }
}

/// Sorts rows lexically, counts distinct prefixes of each length down the
/// sorted list, then writes the counts back in the original row order.
/// `O(n q log n)`.
pub fn build_partitions(bits: &BitMatrix) -> PartitionBuild {
    let (n, q) = (bits.rows(), bits.q());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| bits.row(a).cmp(bits.row(b)));

    let mut ids = vec![0u32; n * q];
    let mut counts = vec![0u32; q];
    for (s, &row) in order.iter().enumerate() {
        if s > 0 {
            let shared = lcp_words(bits.row(order[s - 1]), bits.row(row), q);
            for c in &mut counts[shared..] {
                *c += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            ids[i * n + row] = c;
        }
    }
    let bounds = if n == 0 {
        vec![0; q]
    } else {
        counts.iter().map(|&c| c as usize + 1).collect()
    };
    PartitionBuild {
        partitions: NestedPartitionSet::from_trusted(PartitionSet::from_raw(n, q, ids, bounds)),
        sort_order: order,
    }
}

/// Percentages of distinct feature rows and distinct bit strings, over `n`.
pub fn uniqueness_stats(x: ArrayView2<f64>, bits: &BitMatrix) -> Result<(f64, f64)> {
    if x.nrows() != bits.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} bit rows",
            x.nrows(),
            bits.rows()
        )));
    }
    let n = x.nrows();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    // -0.0 and 0.0 are the same input.
    let rows: HashSet<Vec<u64>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    let strings: HashSet<&[u64]> = (0..n).map(|r| bits.row(r)).collect();
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok((pct(rows.len()), pct(strings.len())))
}

//! Column-major dense storage for the `n × q` arrays of the SROS format.
//!
//! Every SROS routine walks the arrays one column at a time, so columns are
//! kept contiguous.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        ColMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from column-major data. Panics if `data.len() != rows * cols`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major buffer has wrong length");
        ColMatrix { rows, cols, data }
    }

    /// Builds from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        Self::from_fn(n, q, |r, c| rows[r][c])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        ColMatrix { rows, cols, data }
    }

    /// `v · 1ᵀ`: every column equal to `v`.
    pub fn repeat_column(v: &[f64], cols: usize) -> Self {
        let mut data = Vec::with_capacity(v.len() * cols);
        for _ in 0..cols {
            data.extend_from_slice(v);
        }
        ColMatrix {
            rows: v.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ColMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ColMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        ColMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |r, c| self.get(rows[r], c))
    }

    /// Mutable view of column `dst` together with a shared view of column `src`.
    pub(crate) fn col_pair_mut(&mut self, dst: usize, src: usize) -> (&mut [f64], &[f64]) {
        assert_ne!(dst, src);
        let n = self.rows;
        if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * n);
            (&mut lo[dst * n..(dst + 1) * n], &hi[..n])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * n);
            (&mut hi[..n], &lo[src * n..(src + 1) * n])
        }
    }
}

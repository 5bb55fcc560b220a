//! Packed bit-string rows.
//!
//! Bit `t` of a row lives in word `t / 64` at position `63 - t % 64`, so
//! comparing the word slices of two rows compares the bit strings
//! lexically, leading bit first.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    q: usize,
    words: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, q: usize) -> Self {
        let words = q.div_ceil(64);
        BitMatrix {
            rows,
            q,
            words,
            data: vec![0; rows * words],
        }
    }

    /// Rows of 0/1 values.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        let mut out = Self::zeros(rows.len(), q);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != q {
                return Err(Error::Shape(format!("bit row {r} has length {}, expected {q}", row.len())));
            }
            for (t, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => out.set(r, t, true),
                    _ => return Err(Error::InvalidArgument(format!("bit value {b} in row {r}"))),
                }
            }
        }
        Ok(out)
    }

    /// Parses rows written as strings of `0` and `1`.
    pub fn from_strs(rows: &[&str]) -> Result<Self> {
        let rows: Vec<Vec<u8>> = rows
            .iter()
            .map(|s| s.bytes().map(|b| b.wrapping_sub(b'0')).collect())
            .collect();
        Self::from_rows(&rows)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.words..(r + 1) * self.words]
    }

    /// `u64` words per row.
    pub fn words_per_row(&self) -> usize {
        self.words
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, t: usize) -> bool {
        (self.data[r * self.words + t / 64] >> (63 - t % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, t: usize, bit: bool) {
        let w = &mut self.data[r * self.words + t / 64];
        let mask = 1u64 << (63 - t % 64);
        if bit {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn row_bits(&self, r: usize) -> Vec<u8> {
        (0..self.q).map(|t| self.get(r, t) as u8).collect()
    }

    /// Length of the longest common prefix of rows `a` and `b`.
    pub fn lcp(&self, a: usize, b: usize) -> usize {
        lcp_words(self.row(a), self.row(b), self.q)
    }

    /// Column `k` of the result is column `order[k]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.q {
            return Err(Error::Shape(format!(
                "bit order has length {}, rows have {} bits",
                order.len(),
                self.q
            )));
        }
        let mut out = Self::zeros(self.rows, self.q);
        for r in 0..self.rows {
            for (k, &src) in order.iter().enumerate() {
                if self.get(r, src) {
                    out.set(r, k, true);
                }
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.words);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        BitMatrix {
            rows: rows.len(),
            q: self.q,
            words: self.words,
            data,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &BitMatrix) -> Result<Self> {
        if self.q != other.q {
            return Err(Error::Shape(format!("stacking rows of {} and {} bits", self.q, other.q)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(BitMatrix {
            rows: self.rows + other.rows,
            q: self.q,
            words: self.words,
            data,
        })
    }
}

pub(crate) fn lcp_words(a: &[u64], b: &[u64], q: usize) -> usize {
    for (w, (x, y)) in a.iter().zip(b).enumerate() {
        let diff = x ^ y;
        if diff != 0 {
            return (w * 64 + diff.leading_zeros() as usize).min(q);
        }
    }
    q
}

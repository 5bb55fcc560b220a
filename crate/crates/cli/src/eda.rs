//! Uniqueness of inputs versus their bit strings.

use btgp::encoding::{encode_batch, fit_encoding, uniqueness_stats};
use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::CliResult;

/// Percentage points of uniqueness lost to encoding above which an advisory is printed.
pub const ADVISORY_GAP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdaRow {
    pub precision: usize,
    pub ecdf: bool,
    pub pct_unique_bitstrings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdaReport {
    pub command: &'static str,
    pub n: usize,
    pub d: usize,
    pub pct_unique_rows: f64,
    pub rows: Vec<EdaRow>,
    pub advisory: Option<String>,
}

impl EdaReport {
    pub fn unique_bitstrings(&self, precision: usize, ecdf: bool) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.precision == precision && r.ecdf == ecdf)
            .map(|r| r.pct_unique_bitstrings)
    }
}

/// Uniqueness at each precision, without the ECDF and, if requested, with it.
pub fn eda(x: ArrayView2<f64>, precisions: &[usize], with_ecdf: bool) -> CliResult<EdaReport> {
    let mut rows = Vec::new();
    let mut pct_rows = 100.0;
    for &ecdf in if with_ecdf { &[false, true][..] } else { &[false][..] } {
        for &p in precisions {
            let cfg = fit_encoding(x, p, ecdf)?;
            let bits = encode_batch(x, &cfg)?.bits;
            let (r, s) = uniqueness_stats(x, &bits)?;
            pct_rows = r;
            rows.push(EdaRow {
                precision: p,
                ecdf,
                pct_unique_bitstrings: s,
            });
        }
    }
    let best = rows.iter().map(|r| r.pct_unique_bitstrings).fold(0.0, f64::max);
    let advisory = (pct_rows - best > ADVISORY_GAP).then(|| {
        format!(
            "{pct_rows:.1}% of rows are unique but at most {best:.1}% of bit strings are; \
             try --ecdf or a larger --precision"
        )
    });
    Ok(EdaReport {
        command: "eda",
        n: x.nrows(),
        d: x.ncols(),
        pct_unique_rows: pct_rows,
        rows,
        advisory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn distinct_grid_has_no_advisory() {
        let x = Array2::from_shape_fn((16, 1), |(i, _)| i as f64);
        let r = eda(x.view(), &[4], false).unwrap();
        assert_eq!(r.pct_unique_rows, 100.0);
        assert_eq!(r.unique_bitstrings(4, false), Some(100.0));
        assert!(r.advisory.is_none());
    }

    #[test]
    fn clustered_column_triggers_advisory() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| if i < 49 { i as f64 * 1e-3 } else { 100.0 });
        let r = eda(x.view(), &[2], true).unwrap();
        assert!(r.advisory.is_some());
        assert!(r.unique_bitstrings(2, true).unwrap() > r.unique_bitstrings(2, false).unwrap());
    }
}

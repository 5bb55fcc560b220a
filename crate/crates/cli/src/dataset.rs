//! CSV ingestion and train/test splitting.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

/// A numeric table: features plus an optional target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: Option<String>,
    pub x: Array2<f64>,
    pub y: Option<Vec<f64>>,
}

/// How to pick the target column.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Named column; the last column when `None`.
    Column(Option<String>),
    /// Every column is a feature.
    None,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn targets(&self) -> CliResult<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| CliError::Data("dataset has no target column".into()))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            x: self.x.select(Axis(0), rows),
            y: self.y.as_ref().map(|y| rows.iter().map(|&r| y[r]).collect()),
        }
    }
}

pub fn read_csv(path: &Path, target: &TargetSpec) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_csv(file, target)
}

pub fn parse_csv(reader: impl Read, target: &TargetSpec) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Data("missing header row".into()));
    }
    let target_col = match target {
        TargetSpec::None => None,
        TargetSpec::Column(None) => Some(header.len() - 1),
        TargetSpec::Column(Some(name)) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Data(format!("no column named {name:?}")))?,
        ),
    };
    let d = header.len() - usize::from(target_col.is_some());
    if d == 0 {
        return Err(CliError::Data("no feature columns".into()));
    }
    let mut feats = Vec::new();
    let mut ys = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(CliError::Data(format!("row {r}: {} cells, header has {}", record.len(), header.len())));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Data(format!("row {r}, column {:?}: {cell:?} is not a number", header[c])))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("row {r}, column {:?}: non-finite value", header[c])));
            }
            if Some(c) == target_col {
                ys.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let n = feats.len() / d;
    let x = Array2::from_shape_vec((n, d), feats).expect("row lengths checked");
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        feature_names,
        target_name: target_col.map(|c| header[c].clone()),
        x,
        y: target_col.map(|_| ys),
    })
}

/// Parses a train fraction given as `0.8` or as a ratio such as `80:20`.
pub fn parse_split(s: &str) -> Result<f64, String> {
    let frac = match s.split_once(':') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad split {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad split {s:?}"))?;
            a / (a + b)
        }
        None => s.trim().parse().map_err(|_| format!("bad split {s:?}"))?,
    };
    if frac > 0.0 && frac < 1.0 {
        Ok(frac)
    } else {
        Err(format!("split must leave rows on both sides, got {s:?}"))
    }
}

/// Seeded shuffle into (train rows, test rows).
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let cut = cut.clamp(usize::from(n > 1), n.saturating_sub(1));
    let test = idx.split_off(cut);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_defaults_to_last_column() {
        let ds = parse_csv("a,b,y\n1,2,3\n4,5,6\n".as_bytes(), &TargetSpec::Column(None)).unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.y.unwrap(), vec![3.0, 6.0]);
        assert_eq!(ds.x[[1, 0]], 4.0);
    }

    #[test]
    fn named_target_and_errors() {
        let ds = parse_csv("y,a\n1,2\n".as_bytes(), &TargetSpec::Column(Some("y".into()))).unwrap();
        assert_eq!(ds.feature_names, vec!["a"]);
        let bad = parse_csv("a,y\n1,x\n".as_bytes(), &TargetSpec::Column(None)).unwrap_err();
        assert!(bad.to_string().contains("row 0"));
        assert!(parse_csv("a,y\n1,inf\n".as_bytes(), &TargetSpec::Column(None)).is_err());
        assert!(parse_csv("a,y\n1,2\n".as_bytes(), &TargetSpec::Column(Some("z".into()))).is_err());
    }

    #[test]
    fn header_only_file_is_empty() {
        let ds = parse_csv("a,b\n".as_bytes(), &TargetSpec::None).unwrap();
        assert_eq!(ds.x.dim(), (0, 2));
    }

    #[test]
    fn splits() {
        assert_eq!(parse_split("80:20").unwrap(), 0.8);
        assert_eq!(parse_split("0.75").unwrap(), 0.75);
        assert!(parse_split("1").is_err());
        let (a, b) = split_indices(10, 0.8, 3);
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split_indices(10, 0.8, 3), (a, b));
    }
}

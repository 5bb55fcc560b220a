use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single partition of `n` points. `ids[j]` is the cell holding point `j`.
///
/// Ids are 0-based and canonical: cells are numbered in order of first
/// occurrence, so every id is below `cells() ≤ n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    ids: Vec<u32>,
    cells: usize,
}

impl Partition {
    /// Relabels arbitrary ids to first-occurrence order.
    pub fn new(ids: &[u32]) -> Self {
        let (ids, cells) = canonicalize(ids);
        Partition { ids, cells }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn canonicalize(ids: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|&id| {
            let next = map.len() as u32;
            *map.entry(id).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// True iff `fine` is finer than or equal to `coarse`: points sharing a cell
/// of `fine` also share a cell of `coarse`.
pub fn refines(fine: &[u32], coarse: &[u32]) -> Result<bool> {
    if fine.len() != coarse.len() {
        return Err(Error::Shape(format!(
            "refines: partitions have lengths {} and {}",
            fine.len(),
            coarse.len()
        )));
    }
    let bound = fine.iter().map(|&v| v as usize + 1).max().unwrap_or(0);
    Ok(refines_bounded(fine, bound, coarse))
}

pub(crate) fn refines_bounded(fine: &[u32], fine_bound: usize, coarse: &[u32]) -> bool {
    let mut owner = vec![u32::MAX; fine_bound];
    for (&f, &c) in fine.iter().zip(coarse) {
        let slot = &mut owner[f as usize];
        if *slot == u32::MAX {
            *slot = c;
        } else if *slot != c {
            return false;
        }
    }
    true
}

/// `q` partitions of the same `n` points, stored column-major.
///
/// Ids are kept as given so that two sets can share an id space (the
/// train/test blocks of a joint kernel). `bound(i)` is an exclusive upper
/// bound on the ids of column `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSet {
    n: usize,
    q: usize,
    ids: Vec<u32>,
    bounds: Vec<usize>,
}

impl PartitionSet {
    /// Builds from columns; each bound is the column's largest id plus one.
    pub fn from_columns(columns: &[Vec<u32>]) -> Result<Self> {
        let q = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut ids = Vec::with_capacity(n * q);
        let mut bounds = Vec::with_capacity(q);
        for (i, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Shape(format!(
                    "partition column {i} has length {}, expected {n}",
                    col.len()
                )));
            }
            bounds.push(col.iter().map(|&v| v as usize + 1).max().unwrap_or(0));
            ids.extend_from_slice(col);
        }
        Ok(PartitionSet { n, q, ids, bounds })
    }

    /// Builds from columns with explicit per-column id bounds.
    pub fn with_bounds(columns: &[Vec<u32>], bounds: Vec<usize>) -> Result<Self> {
        let mut set = Self::from_columns(columns)?;
        if bounds.len() != set.q {
            return Err(Error::Shape(format!(
                "{} bounds given for {} columns",
                bounds.len(),
                set.q
            )));
        }
        for (i, &b) in bounds.iter().enumerate() {
            if let Some(row) = set.column(i).iter().position(|&v| v as usize >= b) {
                return Err(Error::IdOutOfRange {
                    column: i,
                    row,
                    id: set.column(i)[row],
                    bound: b,
                });
            }
        }
        set.bounds = bounds;
        Ok(set)
    }

    pub(crate) fn from_raw(n: usize, q: usize, ids: Vec<u32>, bounds: Vec<usize>) -> Self {
        debug_assert_eq!(ids.len(), n * q);
        debug_assert_eq!(bounds.len(), q);
        PartitionSet { n, q, ids, bounds }
    }

    /// An `n × 0` set, used when there are no bits.
    pub fn empty(n: usize) -> Self {
        PartitionSet {
            n,
            q: 0,
            ids: Vec::new(),
            bounds: Vec::new(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn column(&self, i: usize) -> &[u32] {
        &self.ids[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn bound(&self, i: usize) -> usize {
        self.bounds[i]
    }

    pub fn max_bound(&self) -> usize {
        self.bounds.iter().copied().max().unwrap_or(0)
    }

    pub fn columns(&self) -> Vec<Vec<u32>> {
        (0..self.q).map(|i| self.column(i).to_vec()).collect()
    }

    /// Relabels every column to first-occurrence order; bounds become cell counts.
    pub fn canonicalized(&self) -> Self {
        let mut ids = Vec::with_capacity(self.ids.len());
        let mut bounds = Vec::with_capacity(self.q);
        let mut map = vec![u32::MAX; self.max_bound()];
        for i in 0..self.q {
            let mut next = 0u32;
            for &v in self.column(i) {
                let slot = &mut map[v as usize];
                if *slot == u32::MAX {
                    *slot = next;
                    next += 1;
                }
                ids.push(*slot);
            }
            for &v in self.column(i) {
                map[v as usize] = u32::MAX;
            }
            bounds.push(next as usize);
        }
        PartitionSet {
            n: self.n,
            q: self.q,
            ids,
            bounds,
        }
    }

    /// Restricts to the listed rows, keeping labels and bounds.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len() * self.q);
        for i in 0..self.q {
            let col = self.column(i);
            ids.extend(rows.iter().map(|&r| col[r]));
        }
        PartitionSet {
            n: rows.len(),
            q: self.q,
            ids,
            bounds: self.bounds.clone(),
        }
    }

    /// First adjacent pair `(coarse, fine)` violating the coarse→fine order.
    pub fn nesting_violation(&self) -> Option<(usize, usize)> {
        (1..self.q).find_map(|i| {
            (!refines_bounded(self.column(i), self.bound(i), self.column(i - 1))).then_some((i - 1, i))
        })
    }
}

/// A [`PartitionSet`] whose columns run from coarsest to finest, each refining
/// the one before it. Ids are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedPartitionSet(PartitionSet);

impl NestedPartitionSet {
    /// Canonicalizes and checks the refinement chain.
    pub fn new(set: PartitionSet) -> Result<Self> {
        let set = set.canonicalized();
        if let Some((coarse, fine)) = set.nesting_violation() {
            return Err(Error::NotNested { coarse, fine });
        }
        Ok(NestedPartitionSet(set))
    }

    pub fn from_columns(columns: &[Vec<u32>]) -> Result<Self> {
        Self::new(PartitionSet::from_columns(columns)?)
    }

    /// Skips canonicalization and the nesting check. The caller guarantees the
    /// chain holds; ids need only lie below their column bound.
    pub fn from_trusted(set: PartitionSet) -> Self {
        debug_assert!(set.nesting_violation().is_none());
        NestedPartitionSet(set)
    }

    pub fn as_set(&self) -> &PartitionSet {
        &self.0
    }

    pub fn into_set(self) -> PartitionSet {
        self.0
    }

    /// Restriction to a subset of rows stays nested; ids are re-canonicalized.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        NestedPartitionSet(self.0.select_rows(rows).canonicalized())
    }
}

impl Deref for NestedPartitionSet {
    type Target = PartitionSet;

    fn deref(&self) -> &PartitionSet {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refines_examples() {
        assert!(refines(&[1, 2, 3], &[1, 1, 1]).unwrap());
        assert!(!refines(&[1, 1, 2], &[1, 2, 2]).unwrap());
        assert!(refines(&[4, 1, 4, 0], &[4, 1, 4, 0]).unwrap());
        assert!(matches!(refines(&[1], &[1, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn canonical_labels_follow_first_occurrence() {
        let p = Partition::new(&[7, 3, 7, 9, 3]);
        assert_eq!(p.ids(), &[0, 1, 0, 2, 1]);
        assert_eq!(p.cells(), 3);

        let set = PartitionSet::from_columns(&[vec![5, 5, 2], vec![9, 4, 1]]).unwrap();
        let c = set.canonicalized();
        assert_eq!(c.column(0), &[0, 0, 1]);
        assert_eq!(c.column(1), &[0, 1, 2]);
        assert_eq!(c.bound(0), 2);
    }

    #[test]
    fn nested_set_rejects_crossing_columns() {
        let err = NestedPartitionSet::from_columns(&[vec![1, 1, 2], vec![1, 2, 2]]).unwrap_err();
        assert_eq!(err, Error::NotNested { coarse: 0, fine: 1 });
        assert!(NestedPartitionSet::from_columns(&[vec![1, 1, 2], vec![1, 2, 3]]).is_ok());
    }

    #[test]
    fn explicit_bounds_are_enforced() {
        let err = PartitionSet::with_bounds(&[vec![0, 3]], vec![3]).unwrap_err();
        assert!(matches!(err, Error::IdOutOfRange { row: 1, id: 3, .. }));
    }

    #[test]
    fn row_selection_keeps_nesting() {
        let set = NestedPartitionSet::from_columns(&[vec![0, 0, 1, 1], vec![0, 1, 2, 3]]).unwrap();
        let sub = set.select_rows(&[3, 1]);
        assert_eq!(sub.column(0), &[0, 1]);
        assert_eq!(sub.bound(1), 2);
    }
}

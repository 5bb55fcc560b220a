//! Sparse rank-one sum (SROS) linear operators.
//!
//! A column of the format is a partition `p` of the points together with two
//! value vectors `u`, `u'`; it stands for `Σ_l u^{p=l} (u'^{p=l})ᵀ`, a matrix
//! that is block diagonal once points are grouped by cell. Stacking `q` such
//! columns and summing gives the operator `L(P, P', U, U')`.
//!
//! The symmetric shorthand `L(P, C, U) = L(P, P, U, C ⊙ U)` requires `C` to be
//! constant within every cell. When the columns of `P` are nested (coarse to
//! fine), `(I + L(P, C, U))⁻¹` is again of the form `I + L(P, C', U')` and can
//! be built with one Sherman–Morrison update per cell, accumulating the log
//! determinant through the matrix determinant lemma on the way.

mod partition;
#[cfg(feature = "dense-oracle")]
mod dense;

pub use partition::{refines, NestedPartitionSet, Partition, PartitionSet};
#[cfg(feature = "dense-oracle")]
pub use dense::to_dense;

use crate::error::{Error, Result};
use crate::matrix::ColMatrix;

/// Smallest admissible value of `1 + z` in a Sherman–Morrison step.
pub const PD_EPSILON: f64 = 1e-12;

/// Output of [`invert`]: `I + L(P, c_prime, u_prime) = (I + L(P, C, U))⁻¹`
/// and `logdet = log|I + L(P, C, U)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseResult {
    pub c_prime: ColMatrix,
    pub u_prime: ColMatrix,
    pub logdet: f64,
}

/// Computes `L(P, P', U, U') · x` by scatter-add into per-cell accumulators
/// followed by a gather. `O((n + m) q)`.
pub fn lin_transform(
    p: &PartitionSet,
    p_prime: &PartitionSet,
    u: &ColMatrix,
    u_prime: &ColMatrix,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_rect_shapes(p, p_prime, u, u_prime)?;
    if x.len() != p_prime.n() {
        return Err(Error::Shape(format!(
            "lin_transform: x has length {}, operator has {} columns",
            x.len(),
            p_prime.n()
        )));
    }
    let mut out = vec![0.0; p.n()];
    let mut acc = vec![0.0; p.max_bound().max(p_prime.max_bound())];
    for i in 0..p.q() {
        let r = p.bound(i).max(p_prime.bound(i));
        let acc = &mut acc[..r];
        acc.fill(0.0);
        for ((&id, &v), &xj) in p_prime.column(i).iter().zip(u_prime.col(i)).zip(x) {
            acc[id as usize] += v * xj;
        }
        for ((o, &id), &v) in out.iter_mut().zip(p.column(i)).zip(u.col(i)) {
            *o += acc[id as usize] * v;
        }
    }
    Ok(out)
}

/// Inverts `I + L(P, C, U)` for nested `P` in `O(n q²)`, returning the inverse
/// in SROS form together with the log determinant.
///
/// Columns are folded in from finest to coarsest. Column `i` adds the rank-one
/// terms `c^{(l)} u^{p=l} u^{p=l}ᵀ` to a matrix whose inverse is already known
/// in SROS form; because every finer cell lies inside a single cell of column
/// `i`, the product `A⁻¹ u^{p=l}` has the same support as `u^{p=l}` and the
/// updates for different cells do not interact.
pub fn invert(p: &NestedPartitionSet, c: &ColMatrix, u: &ColMatrix) -> Result<InverseResult> {
    check_sym_shapes(p, c, u)?;
    let (n, q) = (p.n(), p.q());
    let mut c_prime = ColMatrix::zeros(n, q);
    let mut u_prime = u.clone();
    let mut logdet = 0.0;
    let mut scratch = Scratch::new(p.max_bound());

    for i in (0..q).rev() {
        let ids = p.column(i);
        let r = p.bound(i);
        logdet += sherman_morrison_column(
            i,
            ids,
            r,
            c.col(i),
            u.col(i),
            u_prime.col(i),
            c_prime.col_mut(i),
            &mut scratch,
        )?;
        let ci = c_prime.col(i);
        for k in 0..i {
            let y = &mut scratch.y[..r];
            y.fill(0.0);
            let (up_k, up_i) = u_prime.col_pair_mut(k, i);
            for ((&id, &a), &b) in ids.iter().zip(up_i).zip(u.col(k)) {
                y[id as usize] += a * b;
            }
            for (j, slot) in up_k.iter_mut().enumerate() {
                *slot += ci[j] * up_i[j] * y[ids[j] as usize];
            }
        }
    }
    Ok(InverseResult {
        c_prime,
        u_prime,
        logdet,
    })
}

/// [`invert`] specialised to `U = u · 1ᵀ`, in `O(n q)`.
///
/// With identical columns the corrections applied to `U'[:, k]` and
/// `U'[:, k+1]` agree except for the one contributed by column `k + 1`, so each
/// column is seeded from its finer neighbour and corrected once.
pub fn invert_shared_u(p: &NestedPartitionSet, c: &ColMatrix, u: &[f64]) -> Result<InverseResult> {
    let (n, q) = (p.n(), p.q());
    if c.rows() != n || c.cols() != q || u.len() != n {
        return Err(Error::Shape(format!(
            "invert_shared_u: partitions are {n}×{q}, C is {}×{}, u has length {}",
            c.rows(),
            c.cols(),
            u.len()
        )));
    }
    let mut c_prime = ColMatrix::zeros(n, q);
    let mut u_prime = ColMatrix::repeat_column(u, q);
    let mut logdet = 0.0;
    let mut scratch = Scratch::new(p.max_bound());

    for i in (0..q).rev() {
        let ids = p.column(i);
        let r = p.bound(i);
        logdet += sherman_morrison_column(
            i,
            ids,
            r,
            c.col(i),
            u,
            u_prime.col(i),
            c_prime.col_mut(i),
            &mut scratch,
        )?;
        if i > 0 {
            let ci = c_prime.col(i);
            let y = &mut scratch.y[..r];
            y.fill(0.0);
            let (prev, up_i) = u_prime.col_pair_mut(i - 1, i);
            prev.copy_from_slice(up_i);
            for ((&id, &a), &b) in ids.iter().zip(up_i.iter()).zip(u) {
                y[id as usize] += a * b;
            }
            for (j, slot) in prev.iter_mut().enumerate() {
                *slot += ci[j] * up_i[j] * y[ids[j] as usize];
            }
        }
    }
    Ok(InverseResult {
        c_prime,
        u_prime,
        logdet,
    })
}

struct Scratch {
    z: Vec<f64>,
    cell_c: Vec<f64>,
    y: Vec<f64>,
}

impl Scratch {
    fn new(r: usize) -> Self {
        Scratch {
            z: vec![0.0; r],
            cell_c: vec![f64::NAN; r],
            y: vec![0.0; r],
        }
    }
}

/// One column of the inversion: fills `C'[:, i]` and returns the column's
/// contribution to the log determinant.
#[allow(clippy::too_many_arguments)]
fn sherman_morrison_column(
    column: usize,
    ids: &[u32],
    r: usize,
    c: &[f64],
    u: &[f64],
    u_prime: &[f64],
    c_prime: &mut [f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    let z = &mut scratch.z[..r];
    let cell_c = &mut scratch.cell_c[..r];
    z.fill(0.0);
    cell_c.fill(f64::NAN);
    for (((&id, &cj), &uj), &upj) in ids.iter().zip(c).zip(u).zip(u_prime) {
        let l = id as usize;
        if cell_c[l].is_nan() {
            cell_c[l] = cj;
        } else if cell_c[l] != cj {
            return Err(Error::NotCellConstant { column, cell: id });
        }
        z[l] += cj * upj * uj;
    }
    let mut logdet = 0.0;
    for (l, &zl) in z.iter().enumerate() {
        let denom = 1.0 + zl;
        if !(denom > PD_EPSILON) {
            return Err(Error::NotPositiveDefinite {
                column,
                cell: l as u32,
                value: denom,
            });
        }
        logdet += zl.ln_1p();
    }
    for ((cp, &id), &cj) in c_prime.iter_mut().zip(ids).zip(c) {
        *cp = -cj / (1.0 + z[id as usize]);
    }
    Ok(logdet)
}

/// `Σ_l c^{(l)} (Σ_{j: p_j = l} u_j)²`: the sum of all entries of the
/// single-column operator `L(p, c, u)`.
///
/// Signed cell sums are accumulated directly, so negative `c` needs no
/// complex arithmetic.
pub fn trace_part(p: &[u32], c: &[f64], u: &[f64]) -> Result<f64> {
    if c.len() != p.len() || u.len() != p.len() {
        return Err(Error::Shape(format!(
            "trace_part: p has length {}, c {}, u {}",
            p.len(),
            c.len(),
            u.len()
        )));
    }
    let r = p.iter().map(|&v| v as usize + 1).max().unwrap_or(0);
    let mut cell_c = vec![f64::NAN; r];
    for (&id, &cj) in p.iter().zip(c) {
        let slot = &mut cell_c[id as usize];
        if slot.is_nan() {
            *slot = cj;
        } else if *slot != cj {
            return Err(Error::NotCellConstant { column: 0, cell: id });
        }
    }
    let mut sums = vec![0.0; r];
    Ok(trace_part_unchecked(p, c, u, &mut sums, &mut cell_c))
}

/// [`trace_part`] without the cell-constancy check. Both scratch slices must
/// cover every id in `p`.
pub(crate) fn trace_part_unchecked(p: &[u32], c: &[f64], u: &[f64], sums: &mut [f64], coef: &mut [f64]) -> f64 {
    sums.fill(0.0);
    coef.fill(0.0);
    for ((&id, &cj), &uj) in p.iter().zip(c).zip(u) {
        sums[id as usize] += uj;
        coef[id as usize] = cj;
    }
    sums.iter().zip(coef.iter()).map(|(&s, &cl)| cl * s * s).sum()
}

fn check_sym_shapes(p: &PartitionSet, c: &ColMatrix, u: &ColMatrix) -> Result<()> {
    let dims = (p.n(), p.q());
    if (c.rows(), c.cols()) != dims || (u.rows(), u.cols()) != dims {
        return Err(Error::Shape(format!(
            "partitions are {}×{}, C is {}×{}, U is {}×{}",
            dims.0,
            dims.1,
            c.rows(),
            c.cols(),
            u.rows(),
            u.cols()
        )));
    }
    Ok(())
}

fn check_rect_shapes(
    p: &PartitionSet,
    p_prime: &PartitionSet,
    u: &ColMatrix,
    u_prime: &ColMatrix,
) -> Result<()> {
    if p.q() != p_prime.q()
        || (u.rows(), u.cols()) != (p.n(), p.q())
        || (u_prime.rows(), u_prime.cols()) != (p_prime.n(), p_prime.q())
    {
        return Err(Error::Shape(format!(
            "P is {}×{}, P' is {}×{}, U is {}×{}, U' is {}×{}",
            p.n(),
            p.q(),
            p_prime.n(),
            p_prime.q(),
            u.rows(),
            u.cols(),
            u_prime.rows(),
            u_prime.cols()
        )));
    }
    Ok(())
}

fn check_cell_constant(p: &PartitionSet, c: &ColMatrix) -> Result<()> {
    let mut cell_c = vec![f64::NAN; p.max_bound()];
    for i in 0..p.q() {
        let cell_c = &mut cell_c[..p.bound(i)];
        cell_c.fill(f64::NAN);
        for (&id, &cj) in p.column(i).iter().zip(c.col(i)) {
            let slot = &mut cell_c[id as usize];
            if slot.is_nan() {
                *slot = cj;
            } else if *slot != cj {
                return Err(Error::NotCellConstant { column: i, cell: id });
            }
        }
    }
    Ok(())
}

/// Symmetric operator `L(P, C, U)` over nested partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SrosSymmetric {
    partitions: NestedPartitionSet,
    c: ColMatrix,
    u: ColMatrix,
}

impl SrosSymmetric {
    pub fn new(partitions: NestedPartitionSet, c: ColMatrix, u: ColMatrix) -> Result<Self> {
        check_sym_shapes(&partitions, &c, &u)?;
        check_cell_constant(&partitions, &c)?;
        Ok(SrosSymmetric { partitions, c, u })
    }

    pub(crate) fn new_unchecked(partitions: NestedPartitionSet, c: ColMatrix, u: ColMatrix) -> Self {
        SrosSymmetric { partitions, c, u }
    }

    pub fn partitions(&self) -> &NestedPartitionSet {
        &self.partitions
    }

    pub fn c(&self) -> &ColMatrix {
        &self.c
    }

    pub fn u(&self) -> &ColMatrix {
        &self.u
    }

    pub fn n(&self) -> usize {
        self.partitions.n()
    }

    pub fn q(&self) -> usize {
        self.partitions.q()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cu = self.c.hadamard(&self.u);
        lin_transform(&self.partitions, &self.partitions, &self.u, &cu, x)
    }

    /// Row sums of `C ⊙ U ⊙ U`.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for i in 0..self.q() {
            for ((dj, &cj), &uj) in d.iter_mut().zip(self.c.col(i)).zip(self.u.col(i)) {
                *dj += cj * uj * uj;
            }
        }
        d
    }

    /// `(I + self)⁻¹ = I + result`, plus `log|I + self|`.
    pub fn inverse_plus_identity(&self) -> Result<(SrosSymmetric, f64)> {
        let inv = invert(&self.partitions, &self.c, &self.u)?;
        Ok((
            SrosSymmetric::new_unchecked(self.partitions.clone(), inv.c_prime, inv.u_prime),
            inv.logdet,
        ))
    }

    #[cfg(feature = "dense-oracle")]
    pub fn to_dense(&self) -> ColMatrix {
        let cu = self.c.hadamard(&self.u);
        to_dense(&self.partitions, &self.partitions, &self.u, &cu).expect("shapes checked at construction")
    }
}

/// Rectangular operator `L(P, P', U, U')`, `n × m`, with `P` and `P'`
/// sharing one id space per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SrosRect {
    p: PartitionSet,
    p_prime: PartitionSet,
    u: ColMatrix,
    u_prime: ColMatrix,
}

impl SrosRect {
    pub fn new(p: PartitionSet, p_prime: PartitionSet, u: ColMatrix, u_prime: ColMatrix) -> Result<Self> {
        check_rect_shapes(&p, &p_prime, &u, &u_prime)?;
        Ok(SrosRect {
            p,
            p_prime,
            u,
            u_prime,
        })
    }

    pub fn rows(&self) -> usize {
        self.p.n()
    }

    pub fn cols(&self) -> usize {
        self.p_prime.n()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        lin_transform(&self.p, &self.p_prime, &self.u, &self.u_prime, x)
    }

    pub fn transpose(&self) -> SrosRect {
        SrosRect {
            p: self.p_prime.clone(),
            p_prime: self.p.clone(),
            u: self.u_prime.clone(),
            u_prime: self.u.clone(),
        }
    }

    #[cfg(feature = "dense-oracle")]
    pub fn to_dense(&self) -> ColMatrix {
        to_dense(&self.p, &self.p_prime, &self.u, &self.u_prime).expect("shapes checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(ids: &[u32]) -> PartitionSet {
        PartitionSet::from_columns(&[ids.to_vec()]).unwrap()
    }

    fn ones(n: usize, q: usize) -> ColMatrix {
        ColMatrix::filled(n, q, 1.0)
    }

    #[test]
    fn matvec_all_ones_is_sum_broadcast() {
        let p = single(&[0, 0, 0]);
        let y = lin_transform(&p, &p, &ones(3, 1), &ones(3, 1), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![6.0, 6.0, 6.0]);
    }

    #[test]
    fn matvec_two_blocks() {
        let p = single(&[0, 1, 0]);
        let y = lin_transform(&p, &p, &ones(3, 1), &ones(3, 1), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![4.0, 2.0, 4.0]);
    }

    #[test]
    fn matvec_rejects_bad_lengths() {
        let p = single(&[0, 1, 0]);
        let err = lin_transform(&p, &p, &ones(3, 1), &ones(3, 1), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let two = PartitionSet::from_columns(&[vec![0, 0, 0], vec![0, 1, 2]]).unwrap();
        assert!(lin_transform(&p, &two, &ones(3, 1), &ones(3, 2), &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_coefficients_invert_to_identity() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 0, 1, 1], vec![0, 1, 2, 3]]).unwrap();
        let u = ColMatrix::from_fn(4, 2, |r, c| (r + 2 * c) as f64 - 1.5);
        let inv = invert(&p, &ColMatrix::zeros(4, 2), &u).unwrap();
        assert!(inv.c_prime.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(inv.logdet, 0.0);
    }

    #[test]
    fn scalar_sherman_morrison() {
        let p = NestedPartitionSet::from_columns(&[vec![0]]).unwrap();
        let inv = invert(&p, &ColMatrix::filled(1, 1, 1.0), &ones(1, 1)).unwrap();
        assert_eq!(inv.c_prime.get(0, 0), -0.5);
        assert_eq!(inv.logdet, 2f64.ln());

        let c = 3.0;
        let inv = invert(&p, &ColMatrix::filled(1, 1, c), &ones(1, 1)).unwrap();
        assert!((inv.c_prime.get(0, 0) + c / (1.0 + c)).abs() < 1e-15);
        assert!((inv.logdet - (1.0 + c).ln()).abs() < 1e-15);
    }

    #[test]
    fn shared_u_matches_general_at_one_column() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 1, 0, 2, 1]]).unwrap();
        let u = [0.5, -1.0, 2.0, 1.5, 0.25];
        let c = ColMatrix::from_col_major(5, 1, vec![0.7, 0.2, 0.7, 1.1, 0.2]);
        let a = invert(&p, &c, &ColMatrix::repeat_column(&u, 1)).unwrap();
        let b = invert_shared_u(&p, &c, &u).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indefinite_step_is_reported() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 0]]).unwrap();
        let err = invert(&p, &ColMatrix::filled(2, 1, -0.5), &ones(2, 1)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { column: 0, cell: 0, .. }));
    }

    #[test]
    fn non_constant_coefficients_are_rejected() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 0]]).unwrap();
        let c = ColMatrix::from_col_major(2, 1, vec![1.0, 2.0]);
        assert!(matches!(
            invert(&p, &c, &ones(2, 1)),
            Err(Error::NotCellConstant { column: 0, cell: 0 })
        ));
        assert!(SrosSymmetric::new(p, c, ones(2, 1)).is_err());
        assert!(trace_part(&[0, 0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn trace_part_examples() {
        assert_eq!(trace_part(&[0, 0, 1], &[2.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 11.0);
        assert_eq!(trace_part(&[0, 0, 1], &[2.0, 2.0, 3.0], &[0.0; 3]).unwrap(), 0.0);
        // Negative coefficients and signed entries.
        let t = trace_part(&[1, 0, 1, 0], &[-2.0, 0.5, -2.0, 0.5], &[1.0, 3.0, -4.0, 1.0]).unwrap();
        assert_eq!(t, -2.0 * 9.0 + 0.5 * 16.0);
    }

    #[test]
    fn diagonal_sums_rows() {
        let p = NestedPartitionSet::from_columns(&[vec![0, 0], vec![0, 1]]).unwrap();
        let k = SrosSymmetric::new(
            p,
            ColMatrix::from_col_major(2, 2, vec![0.25, 0.25, 0.75, 0.5]),
            ColMatrix::from_col_major(2, 2, vec![1.0, 2.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(k.diagonal(), vec![1.0, 1.5]);
    }
}

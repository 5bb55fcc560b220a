use crate::error::Result;
use crate::matrix::ColMatrix;

use super::{check_rect_shapes, PartitionSet};

/// Materializes `L(P, P', U, U')` as a dense `n × m` matrix. Test use only.
pub fn to_dense(p: &PartitionSet, p_prime: &PartitionSet, u: &ColMatrix, u_prime: &ColMatrix) -> Result<ColMatrix> {
    check_rect_shapes(p, p_prime, u, u_prime)?;
    let (n, m) = (p.n(), p_prime.n());
    let mut out = ColMatrix::zeros(n, m);
    for i in 0..p.q() {
        let (pa, pb) = (p.column(i), p_prime.column(i));
        let (ua, ub) = (u.col(i), u_prime.col(i));
        for b in 0..m {
            for a in 0..n {
                if pa[a] == pb[b] {
                    out.set(a, b, out.get(a, b) + ua[a] * ub[b]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pattern() {
        let p = PartitionSet::from_columns(&[vec![0, 1]]).unwrap();
        let one = ColMatrix::filled(2, 1, 1.0);
        let d = to_dense(&p, &p, &one, &one).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn outer_product() {
        let p = PartitionSet::from_columns(&[vec![0, 0]]).unwrap();
        let (a, b, c, d) = (2.0, 3.0, 5.0, 7.0);
        let u = ColMatrix::from_col_major(2, 1, vec![a, b]);
        let v = ColMatrix::from_col_major(2, 1, vec![c, d]);
        let m = to_dense(&p, &p, &u, &v).unwrap();
        assert_eq!((m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1)), (a * c, a * d, b * c, b * d));
    }

    #[test]
    fn five_points_two_cells() {
        // Cells {0, 2, 3} and {1, 4}; entries across cells vanish.
        let p = PartitionSet::from_columns(&[vec![0, 1, 0, 0, 1]]).unwrap();
        let u = ColMatrix::from_col_major(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let m = to_dense(&p, &p, &u, &u).unwrap();
        let expected = [
            [1.0, 0.0, 3.0, 4.0, 0.0],
            [0.0, 4.0, 0.0, 0.0, 10.0],
            [3.0, 0.0, 9.0, 12.0, 0.0],
            [4.0, 0.0, 12.0, 16.0, 0.0],
            [0.0, 10.0, 0.0, 0.0, 25.0],
        ];
        for (a, row) in expected.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                assert_eq!(m.get(a, b), v);
            }
        }
    }
}

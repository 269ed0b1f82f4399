//! Small dense matrices over hyper-dual numbers.

use nalgebra::DMatrix;

use super::{constant, HD};
use crate::Matrix;

pub fn identity_hd(n: usize) -> DMatrix<HD> {
    DMatrix::from_fn(n, n, |i, j| constant(if i == j { 1.0 } else { 0.0 }))
}

pub fn lift_matrix(m: &Matrix) -> DMatrix<HD> {
    m.map(constant)
}

pub fn transpose_hd(m: &DMatrix<HD>) -> DMatrix<HD> {
    m.transpose()
}

pub fn matmul_hd(a: &DMatrix<HD>, b: &DMatrix<HD>) -> DMatrix<HD> {
    assert_eq!(a.ncols(), b.nrows(), "matmul_hd dimension mismatch");
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        (0..a.ncols()).fold(constant(0.0), |acc, k| acc + a[(i, k)] * b[(k, j)])
    })
}

/// Gauss-Jordan inverse with partial pivoting on the real parts.
pub fn inverse_hd(m: &DMatrix<HD>) -> Option<DMatrix<HD>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "inverse_hd needs a square matrix");
    let mut a = m.clone();
    let mut inv = identity_hd(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].re.abs().total_cmp(&a[(j, col)].re.abs()))?;
        if a[(pivot, col)].re == 0.0 || !a[(pivot, col)].re.is_finite() {
            return None;
        }
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            for j in 0..n {
                let (aij, ainv) = (a[(col, j)], inv[(col, j)]);
                a[(i, j)] -= f * aij;
                inv[(i, j)] -= f * ainv;
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_carries_derivatives() {
        // d/ds (A + sB)⁻¹ = −A⁻¹ B A⁻¹ at s = 0
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let b = Matrix::from_row_slice(2, 2, &[0.3, -1.0, 0.2, 0.7]);
        let m = DMatrix::from_fn(2, 2, |i, j| HD::new(a[(i, j)], b[(i, j)], 0.0, 0.0));
        let inv = inverse_hd(&m).unwrap();
        let ainv = a.clone().try_inverse().unwrap();
        let expected = -&ainv * &b * &ainv;
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv[(i, j)].re - ainv[(i, j)]).abs() < 1e-14);
                assert!((inv[(i, j)].eps1 - expected[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = lift_matrix(&Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        // Elimination leaves an exact zero pivot for this matrix.
        assert!(inverse_hd(&m).is_none());
    }

    #[test]
    fn product_with_identity() {
        let a = lift_matrix(&Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = matmul_hd(&identity_hd(2), &a);
        assert_eq!(p.map(|x| x.re), a.map(|x| x.re));
    }
}

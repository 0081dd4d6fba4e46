//! Small dense helpers for `d x d` symmetric matrices, `d <= 3`.

use nalgebra::DMatrix;

use crate::lagrangian::MAX_DIM;

pub type SmallMat = [[f64; MAX_DIM]; MAX_DIM];

pub fn to_dmatrix(m: &SmallMat, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

/// Eigenvalues of the symmetric part of the leading `d x d` block.
pub fn symmetric_eigenvalues(m: &SmallMat, d: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i][j] + m[j][i]));
    a.symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// Spectral norm of the symmetric part of the leading `d x d` block.
pub fn symmetric_norm(m: &SmallMat, d: usize) -> f64 {
    symmetric_eigenvalues(m, d)
        .into_iter()
        .fold(0.0, |acc, e| acc.max(e.abs()))
}

pub fn sub(a: &SmallMat, b: &SmallMat) -> SmallMat {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

pub fn max_asymmetry(m: &SmallMat, d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..i {
            worst = worst.max((m[i][j] - m[j][i]).abs());
        }
    }
    worst
}

pub fn from_rows(rows: &[Vec<f64>]) -> SmallMat {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            out[i][j] = *v;
        }
    }
    out
}

pub fn to_rows(m: &SmallMat, d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| m[i][..d].to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let m = from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut ev = symmetric_eigenvalues(&m, 2);
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        assert!((symmetric_norm(&m, 2) - 3.0).abs() < 1e-14);
        assert_eq!(max_asymmetry(&m, 2), 0.0);
    }
}

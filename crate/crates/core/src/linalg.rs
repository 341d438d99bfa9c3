//! Dense helpers: a small allocation-light LU for the solver's Jacobian
//! blocks, and symmetric-matrix utilities on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// LU factorisation with partial pivoting of a small row-major matrix.
#[derive(Debug, Clone)]
pub struct SmallLu {
    n: usize,
    lu: Vec<f64>,
    /// Row swapped with row `k` at elimination step `k`.
    swaps: Vec<usize>,
}

impl SmallLu {
    /// Returns `None` when a pivot is exactly zero or non-finite.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut lu = a[..n * n].to_vec();
        let mut swaps = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in k + 1..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return None;
            }
            if p != k {
                let (top, bottom) = lu.split_at_mut(p * n);
                top[k * n..(k + 1) * n].swap_with_slice(&mut bottom[..n]);
            }
            swaps.push(p);
            let (upper, lower) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..];
            let pivot = pivot_row[k];
            for row in lower.chunks_exact_mut(n) {
                let f = row[k] / pivot;
                row[k] = f;
                if f != 0.0 {
                    for (x, &y) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                        *x -= f * y;
                    }
                }
            }
        }
        Some(SmallLu { n, lu, swaps })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let b = &mut b[..n];
        for (k, &p) in self.swaps.iter().enumerate() {
            b.swap(k, p);
        }
        for r in 1..n {
            let row = &self.lu[r * n..r * n + r];
            let s: f64 = row.iter().zip(&b[..r]).map(|(l, y)| l * y).sum();
            b[r] -= s;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n..(r + 1) * n];
            let s: f64 = row[r + 1..].iter().zip(&b[r + 1..]).map(|(u, y)| u * y).sum();
            b[r] = (b[r] - s) / row[r];
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric matrix via its eigendecomposition. Eigenvalues
/// below `rcond * max|lambda|` are dropped (pseudo-inverse); the flag reports
/// whether that happened.
pub fn symmetric_inverse(m: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cutoff = rcond * max;
    let mut deficient = max == 0.0;
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= cutoff || lam == 0.0 {
            deficient = true;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / lam;
    }
    (symmetrize(&inv), deficient)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// 2-norm condition number of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lu_solves_with_pivoting() {
        let a = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = SmallLu::factor(&a, 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut b = [0.0; 3];
        for r in 0..3 {
            b[r] = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
        }
        lu.solve_in_place(&mut b);
        for i in 0..3 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn pseudo_inverse_flags_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (inv, deficient) = symmetric_inverse(&m, 1e-12);
        assert!(deficient);
        assert!((inv[(0, 0)] - 0.25).abs() < 1e-12);
        let (inv, deficient) = symmetric_inverse(&DMatrix::from_diagonal_element(2, 2, 4.0), 1e-12);
        assert!(!deficient);
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
    }
}

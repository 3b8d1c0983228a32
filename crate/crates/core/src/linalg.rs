//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Singular values at or below `rel_tol · max(σ_max, 1)` count as zero, so a
/// Jacobian that has almost vanished is rank deficient rather than rescaled.
fn cutoff(sv: &[f64], rel_tol: f64) -> f64 {
    rel_tol * sv.iter().copied().fold(1.0, f64::max)
}

/// Numerical rank under [`cutoff`].
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    if sv.iter().any(|s| !s.is_finite()) {
        return 0;
    }
    let cut = cutoff(&sv, rel_tol);
    sv.iter().filter(|&&s| s > cut).count()
}

pub fn smallest_singular_value(m: &Matrix) -> f64 {
    let sv = singular_values(m);
    if sv.len() < m.nrows().min(m.ncols()) || sv.is_empty() {
        return 0.0;
    }
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Full SVD with square `U`/`V`, obtained by zero-padding to a square matrix.
/// Singular values and full right singular vectors of `m`. Rows are padded
/// with zeros up to `ncols`, so `V` is always `ncols × ncols`.
fn right_svd(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.ncols();
    let mut tall = Matrix::zeros(m.nrows().max(n), n);
    tall.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = tall.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    (svd.singular_values.iter().copied().collect(), vt.transpose())
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &Matrix, rel_tol: f64) -> Matrix {
    let n = m.ncols();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return Matrix::identity(n, n);
    }
    let (sv, v) = right_svd(m);
    let cut = cutoff(&sv, rel_tol);
    let cols: Vec<usize> = (0..v.ncols()).filter(|&j| sv[j] <= cut).collect();
    let mut basis = Matrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        basis.set_column(k, &v.column(j));
    }
    basis
}

/// Orthonormal basis (as columns) of the row space of `m`.
pub fn row_space(m: &Matrix, rel_tol: f64) -> Matrix {
    let n = m.ncols();
    if m.nrows() == 0 || n == 0 {
        return Matrix::zeros(n, 0);
    }
    let (sv, v) = right_svd(m);
    let cut = cutoff(&sv, rel_tol);
    let cols: Vec<usize> = (0..v.ncols()).filter(|&j| sv[j] > cut).collect();
    let mut basis = Matrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        basis.set_column(k, &v.column(j));
    }
    basis
}

/// Minimum-norm least-squares solution of `A z ≈ b` and the residual norm `|Az − b|₂`.
pub fn least_squares(a: &Matrix, b: &Vector) -> (Vector, f64) {
    assert_eq!(a.nrows(), b.len(), "least_squares: row count mismatch");
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return (Vector::zeros(n), b.norm());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = smax * 1e-12 * (a.nrows().max(n) as f64);
    let z = if smax == 0.0 {
        Vector::zeros(n)
    } else {
        svd.solve(b, cut).expect("SVD computed with U and V")
    };
    let res = (a * &z - b).norm();
    (z, res)
}

/// Moore-Penrose pseudo-inverse.
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Matrix::zeros(a.ncols(), a.nrows());
    }
    let smax = singular_values(a).into_iter().fold(0.0, f64::max);
    if smax == 0.0 {
        return Matrix::zeros(a.ncols(), a.nrows());
    }
    a.clone()
        .pseudo_inverse(smax * 1e-12 * (a.nrows().max(a.ncols()) as f64))
        .expect("non-negative epsilon")
}

/// Symmetric positive-definite matrix stored by rows in envelope (skyline) form.
///
/// Row `i` keeps entries `first[i]..=i`. Cholesky fill stays inside the
/// envelope, so banded systems with a few long-range couplings factor in
/// time proportional to the envelope size.
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    /// `first[i]` is the smallest column index with a nonzero in row `i` (≤ i).
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        EnvelopeMatrix {
            first,
            start,
            data: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        (j >= self.first[i]).then(|| self.start[i] + j - self.first[i])
    }

    /// Adds `v` at `(i, j)` (and symmetrically). Panics outside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .idx(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside envelope"));
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.dim() {
            let k = self.start[i] + i - self.first[i];
            self.data[k] += shift;
        }
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.data[self.start[i] + i - self.first[i]].abs())
            .fold(0.0, f64::max)
    }

    /// Clears row and column `j` and puts 1 on the diagonal.
    pub fn fix_variable(&mut self, j: usize) {
        let fj = self.first[j];
        for k in fj..j {
            self.data[self.start[j] + k - fj] = 0.0;
        }
        self.data[self.start[j] + j - fj] = 1.0;
        for r in j + 1..self.dim() {
            if self.first[r] <= j {
                self.data[self.start[r] + j - self.first[r]] = 0.0;
            }
        }
    }

    /// In-place Cholesky `L Lᵀ`. Returns `false` if a pivot is not positive.
    pub fn cholesky(&mut self) -> bool {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                let mut s = self.data[self.start[i] + j - fi];
                for k in lo..j {
                    s -= self.data[self.start[i] + k - fi] * self.data[self.start[j] + k - fj];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return false;
                    }
                    self.data[self.start[i] + i - fi] = s.sqrt();
                } else {
                    let djj = self.data[self.start[j] + j - fj];
                    self.data[self.start[i] + j - fi] = s / djj;
                }
            }
        }
        true
    }

    /// Solves with a factor produced by [`cholesky`](Self::cholesky).
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[self.start[i] + k - fi] * y[k];
            }
            y[i] = s / self.data[self.start[i] + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.data[self.start[i] + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[self.start[i] + k - fi] * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m, DEFAULT_RANK_TOL), 1);
        assert_eq!(rank(&Matrix::identity(3, 3), DEFAULT_RANK_TOL), 3);
        let e = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(rank(&e, DEFAULT_RANK_TOL), 1);
        assert_eq!(rank(&Matrix::zeros(2, 3), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn least_squares_examples() {
        let (z, r) = least_squares(&Matrix::identity(2, 2), &Vector::from_vec(vec![1.0, 2.0]));
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 2.0).abs() < 1e-14 && r < 1e-14);
        let a = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (z, r) = least_squares(&a, &Vector::from_vec(vec![0.0, 2.0]));
        assert!((z[0] - 1.0).abs() < 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (z, r) = least_squares(&a, &Vector::from_vec(vec![2.0]));
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 1.0).abs() < 1e-14 && r < 1e-14);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = Matrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&m, DEFAULT_RANK_TOL);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_tall_matrix() {
        let m = Matrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert_eq!(null_space(&m, DEFAULT_RANK_TOL).ncols(), 0);
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let ns = null_space(&m, DEFAULT_RANK_TOL);
        assert_eq!(ns.ncols(), 1);
        assert!((&m * &ns).norm() < 1e-12 && (ns.norm() - 1.0).abs() < 1e-12);
        assert_eq!(row_space(&m, DEFAULT_RANK_TOL).ncols(), 1);
    }

    #[test]
    fn envelope_cholesky_matches_dense() {
        // tridiagonal plus a long-range coupling between 0 and 5
        let n: usize = 6;
        let mut first: Vec<usize> = (0..n).map(|i| i.saturating_sub(1)).collect();
        first[5] = 0;
        let mut env = EnvelopeMatrix::new(first);
        let mut dense = Matrix::zeros(n, n);
        for i in 0..n {
            env.add(i, i, 4.0);
            dense[(i, i)] = 4.0;
            if i > 0 {
                env.add(i, i - 1, -1.0);
                dense[(i, i - 1)] = -1.0;
                dense[(i - 1, i)] = -1.0;
            }
        }
        env.add(5, 0, 0.5);
        dense[(5, 0)] = 0.5;
        dense[(0, 5)] = 0.5;
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        assert!(env.cholesky());
        let x = env.solve_factored(&b);
        let expected = dense.lu().solve(&Vector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rank_is_permutation_invariant(
            entries in proptest::collection::vec(-3i32..=3, 12),
            rp in Just(vec![0usize, 1, 2]).prop_shuffle(),
            cp in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let m = Matrix::from_iterator(3, 4, entries.iter().map(|&v| v as f64));
            let mut p = Matrix::zeros(3, 4);
            for i in 0..3 {
                for j in 0..4 {
                    p[(i, j)] = m[(rp[i], cp[j])];
                }
            }
            prop_assert_eq!(rank(&m, DEFAULT_RANK_TOL), rank(&p, DEFAULT_RANK_TOL));
        }
    }
}

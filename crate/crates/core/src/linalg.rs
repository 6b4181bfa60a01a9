//! Small dense linear-algebra helpers shared across the estimators.

use nalgebra::{DMatrix, DVector};

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors permuted to match).
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen_desc(m: &DMatrix<f64>) -> SortedEigen {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `V diag(f(values)) V^T` for a symmetric matrix.
pub fn spectral_map(eig: &SortedEigen, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.values[j]);
    }
    &scaled * eig.vectors.transpose()
}

/// Projection onto the positive semidefinite cone by eigenvalue clipping.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eigen_desc(m);
    symmetrize(&spectral_map(&eig, |v| v.max(0.0)))
}

/// `J M J` with `J = I - 11^T/n`.
pub fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Subtracts column means in place.
pub fn center_columns(m: &mut DMatrix<f64>) {
    let nf = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
    }
}

/// `|1^T M|_inf`, the largest absolute column sum.
pub fn column_sum_sup(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.sum().abs()).fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Orthonormal basis of the full space whose leading `m.ncols()` columns span the
/// columns of `m` (assumed linearly independent). Returned matrix is square.
pub fn complete_orthonormal_basis(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut aug = DMatrix::zeros(rows, cols + rows);
    aug.columns_mut(0, cols).copy_from(m);
    aug.columns_mut(cols, rows).fill_with_identity();
    let qr = aug.qr();
    let r = qr.r();
    let diag = DVector::from_iterator(cols, (0..cols).map(|i| r[(i, i)].abs()));
    (qr.q(), diag)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, discarding
/// eigenvalues below `rel_tol * max|eigenvalue|`.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = sym_eigen_desc(m);
    let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cut = rel_tol * scale;
    spectral_map(&eig, |v| if v.abs() > cut { 1.0 / v } else { 0.0 })
}

/// Row-major vectorization `(m_1^T, ..., m_n^T)^T`.
pub fn vec_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |idx, _| m[(idx / c, idx % c)])
}

pub fn unvec_rows(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

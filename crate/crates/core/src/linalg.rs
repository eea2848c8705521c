//! Block-structured dense linear algebra on `Td × Td` operators.
//!
//! Operators on the stacked feature space are `T × T` arrays of `d × d` blocks. When every
//! block is a multiple of the identity the operator is stored as `G ⊗ I_d` with only the
//! `T × T` coefficient matrix kept around; products, inverses and traces then cost `O(T³)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A `Td × Td` operator, either Kronecker-structured (`coeffs ⊗ I_d`) or dense.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockMatrix {
    Kron { coeffs: DMatrix<f64>, d: usize },
    Dense { mat: DMatrix<f64>, tasks: usize, d: usize },
}

impl BlockMatrix {
    pub fn kron(coeffs: DMatrix<f64>, d: usize) -> Self {
        assert!(coeffs.is_square(), "Kronecker coefficients must be square");
        BlockMatrix::Kron { coeffs, d }
    }

    pub fn dense(mat: DMatrix<f64>, tasks: usize, d: usize) -> Self {
        assert_eq!(mat.nrows(), tasks * d);
        assert_eq!(mat.ncols(), tasks * d);
        BlockMatrix::Dense { mat, tasks, d }
    }

    pub fn identity(tasks: usize, d: usize) -> Self {
        BlockMatrix::kron(DMatrix::identity(tasks, tasks), d)
    }

    pub fn zeros(tasks: usize, d: usize) -> Self {
        BlockMatrix::kron(DMatrix::zeros(tasks, tasks), d)
    }

    /// `E_{tv} ⊗ I_d`, the selector of block `(t, v)`.
    pub fn selector(tasks: usize, d: usize, t: usize, v: usize) -> Self {
        let mut c = DMatrix::zeros(tasks, tasks);
        c[(t, v)] = 1.0;
        BlockMatrix::kron(c, d)
    }

    /// Block-diagonal operator with the given `d × d` diagonal blocks.
    pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> Self {
        let tasks = blocks.len();
        let d = blocks[0].nrows();
        let mut mat = DMatrix::zeros(tasks * d, tasks * d);
        for (t, b) in blocks.iter().enumerate() {
            mat.view_mut((t * d, t * d), (d, d)).copy_from(b);
        }
        BlockMatrix::dense(mat, tasks, d)
    }

    pub fn tasks(&self) -> usize {
        match self {
            BlockMatrix::Kron { coeffs, .. } => coeffs.nrows(),
            BlockMatrix::Dense { tasks, .. } => *tasks,
        }
    }

    pub fn block_dim(&self) -> usize {
        match self {
            BlockMatrix::Kron { d, .. } | BlockMatrix::Dense { d, .. } => *d,
        }
    }

    pub fn dim(&self) -> usize {
        self.tasks() * self.block_dim()
    }

    pub fn is_kron(&self) -> bool {
        matches!(self, BlockMatrix::Kron { .. })
    }

    pub fn kron_coeffs(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockMatrix::Kron { coeffs, .. } => Some(coeffs),
            BlockMatrix::Dense { .. } => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            BlockMatrix::Dense { mat, .. } => mat.clone(),
            BlockMatrix::Kron { coeffs, d } => kronecker_identity(coeffs, *d),
        }
    }

    fn into_dense_parts(self) -> (DMatrix<f64>, usize, usize) {
        match self {
            BlockMatrix::Dense { mat, tasks, d } => (mat, tasks, d),
            BlockMatrix::Kron { ref coeffs, d } => (kronecker_identity(coeffs, d), coeffs.nrows(), d),
        }
    }

    /// Block `(t, v)` as a `d × d` matrix.
    pub fn block(&self, t: usize, v: usize) -> DMatrix<f64> {
        match self {
            BlockMatrix::Kron { coeffs, d } => DMatrix::identity(*d, *d) * coeffs[(t, v)],
            BlockMatrix::Dense { mat, d, .. } => mat.view((t * d, v * d), (*d, *d)).into_owned(),
        }
    }

    fn check_compatible(&self, other: &BlockMatrix) {
        assert_eq!(self.tasks(), other.tasks(), "task count mismatch");
        assert_eq!(self.block_dim(), other.block_dim(), "block size mismatch");
    }

    pub fn mul(&self, other: &BlockMatrix) -> BlockMatrix {
        self.check_compatible(other);
        match (self, other) {
            (BlockMatrix::Kron { coeffs: a, d }, BlockMatrix::Kron { coeffs: b, .. }) => BlockMatrix::kron(a * b, *d),
            (BlockMatrix::Kron { coeffs, d }, BlockMatrix::Dense { mat, tasks, .. }) => {
                BlockMatrix::dense(kron_left_mul(coeffs, mat, *d), *tasks, *d)
            }
            (BlockMatrix::Dense { mat, tasks, .. }, BlockMatrix::Kron { coeffs, d }) => {
                let prod = kron_left_mul(&coeffs.transpose(), &mat.transpose(), *d);
                BlockMatrix::dense(prod.transpose(), *tasks, *d)
            }
            (BlockMatrix::Dense { mat: a, tasks, d }, BlockMatrix::Dense { mat: b, .. }) => {
                BlockMatrix::dense(a * b, *tasks, *d)
            }
        }
    }

    pub fn add(&self, other: &BlockMatrix) -> BlockMatrix {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &BlockMatrix) -> BlockMatrix {
        self.axpby(1.0, other, -1.0)
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &BlockMatrix, b: f64) -> BlockMatrix {
        self.check_compatible(other);
        match (self, other) {
            (BlockMatrix::Kron { coeffs: x, d }, BlockMatrix::Kron { coeffs: y, .. }) => {
                BlockMatrix::kron(x * a + y * b, *d)
            }
            _ => {
                let (tasks, d) = (self.tasks(), self.block_dim());
                BlockMatrix::dense(self.to_dense() * a + other.to_dense() * b, tasks, d)
            }
        }
    }

    pub fn scale(&self, s: f64) -> BlockMatrix {
        match self {
            BlockMatrix::Kron { coeffs, d } => BlockMatrix::kron(coeffs * s, *d),
            BlockMatrix::Dense { mat, tasks, d } => BlockMatrix::dense(mat * s, *tasks, *d),
        }
    }

    pub fn transpose(&self) -> BlockMatrix {
        match self {
            BlockMatrix::Kron { coeffs, d } => BlockMatrix::kron(coeffs.transpose(), *d),
            BlockMatrix::Dense { mat, tasks, d } => BlockMatrix::dense(mat.transpose(), *tasks, *d),
        }
    }

    /// `(X + Xᵀ)/2`.
    pub fn symmetrize(&self) -> BlockMatrix {
        self.axpby(0.5, &self.transpose(), 0.5)
    }

    pub fn trace(&self) -> f64 {
        match self {
            BlockMatrix::Kron { coeffs, d } => coeffs.trace() * *d as f64,
            BlockMatrix::Dense { mat, .. } => mat.trace(),
        }
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &BlockMatrix) -> f64 {
        self.check_compatible(other);
        match (self, other) {
            (BlockMatrix::Kron { coeffs: a, d }, BlockMatrix::Kron { coeffs: b, .. }) => {
                a.component_mul(&b.transpose()).sum() * *d as f64
            }
            (BlockMatrix::Kron { coeffs, d }, BlockMatrix::Dense { mat, .. })
            | (BlockMatrix::Dense { mat, .. }, BlockMatrix::Kron { coeffs, d }) => {
                // tr((c ⊗ I) M) = Σ_{t,v} c_{tv} tr(M_{vt})
                let tasks = coeffs.nrows();
                let mut acc = 0.0;
                for t in 0..tasks {
                    for v in 0..tasks {
                        let c = coeffs[(t, v)];
                        if c != 0.0 {
                            acc += c * mat.view((v * d, t * d), (*d, *d)).trace();
                        }
                    }
                }
                acc
            }
            (BlockMatrix::Dense { mat: a, .. }, BlockMatrix::Dense { mat: b, .. }) => {
                a.component_mul(&b.transpose()).sum()
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            BlockMatrix::Kron { coeffs, d } => coeffs.norm() * (*d as f64).sqrt(),
            BlockMatrix::Dense { mat, .. } => mat.norm(),
        }
    }

    /// Inverse of a symmetric positive-definite operator.
    pub fn inverse_spd(&self) -> Result<BlockMatrix> {
        match self {
            BlockMatrix::Kron { coeffs, d } => Ok(BlockMatrix::kron(spd_inverse(coeffs)?, *d)),
            BlockMatrix::Dense { mat, tasks, d } => Ok(BlockMatrix::dense(spd_inverse(mat)?, *tasks, *d)),
        }
    }

    /// Inverse of a general square operator (LU).
    pub fn inverse(&self) -> Result<BlockMatrix> {
        let inv = |m: &DMatrix<f64>| {
            m.clone().try_inverse().ok_or_else(|| Error::NumericalBreakdown("singular block operator".into()))
        };
        match self {
            BlockMatrix::Kron { coeffs, d } => Ok(BlockMatrix::kron(inv(coeffs)?, *d)),
            BlockMatrix::Dense { mat, tasks, d } => Ok(BlockMatrix::dense(inv(mat)?, *tasks, *d)),
        }
    }

    /// `tr(Wᵀ · self · W)` for a stacked `Td × q` matrix `W`.
    pub fn quadratic_trace(&self, w: &DMatrix<f64>) -> f64 {
        assert_eq!(w.nrows(), self.dim(), "stacked weights have the wrong height");
        match self {
            BlockMatrix::Kron { coeffs, d } => {
                let gram = task_gram(w, coeffs.nrows(), *d);
                coeffs.component_mul(&gram).sum()
            }
            BlockMatrix::Dense { mat, .. } => (w.transpose() * mat * w).trace(),
        }
    }

    /// `tr(Wᵀ (c ⊗ I) W)` given only the task Gram `S_{tv} = tr(W_tᵀ W_v)`.
    pub fn quadratic_trace_from_gram(&self, gram: &DMatrix<f64>) -> Result<f64> {
        match self {
            BlockMatrix::Kron { coeffs, .. } => Ok(coeffs.component_mul(gram).sum()),
            BlockMatrix::Dense { .. } => Err(Error::InvalidInput(
                "a task Gram only determines quadratic forms of Kronecker-structured operators".into(),
            )),
        }
    }

    pub fn max_abs_diff(&self, other: &BlockMatrix) -> f64 {
        match (self, other) {
            (BlockMatrix::Kron { coeffs: a, .. }, BlockMatrix::Kron { coeffs: b, .. }) => (a - b).amax(),
            _ => (self.to_dense() - other.to_dense()).amax(),
        }
    }

    pub fn into_dense(self) -> BlockMatrix {
        let (mat, tasks, d) = self.into_dense_parts();
        BlockMatrix::dense(mat, tasks, d)
    }
}

/// `S_{tv} = tr(W_tᵀ W_v)` for a stacked `Td × q` matrix.
pub fn task_gram(w: &DMatrix<f64>, tasks: usize, d: usize) -> DMatrix<f64> {
    let mut gram = DMatrix::zeros(tasks, tasks);
    for t in 0..tasks {
        let wt = w.rows(t * d, d);
        for v in t..tasks {
            let wv = w.rows(v * d, d);
            let s = wt.component_mul(&wv).sum();
            gram[(t, v)] = s;
            gram[(v, t)] = s;
        }
    }
    gram
}

/// `coeffs ⊗ I_d` as a dense matrix.
pub fn kronecker_identity(coeffs: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let tasks = coeffs.nrows();
    let mut out = DMatrix::zeros(tasks * d, tasks * d);
    for t in 0..tasks {
        for v in 0..tasks {
            let c = coeffs[(t, v)];
            if c != 0.0 {
                for i in 0..d {
                    out[(t * d + i, v * d + i)] = c;
                }
            }
        }
    }
    out
}

// (c ⊗ I_d) · M
fn kron_left_mul(coeffs: &DMatrix<f64>, mat: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let tasks = coeffs.nrows();
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for t in 0..tasks {
        for k in 0..tasks {
            let c = coeffs[(t, k)];
            if c != 0.0 {
                let src = mat.rows(k * d, d) * c;
                let mut dst = out.rows_mut(t * d, d);
                dst += src;
            }
        }
    }
    out
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NumericalBreakdown("matrix is not positive definite".into()))
}

/// Symmetric PSD square root and its inverse through an eigendecomposition.
pub fn sym_sqrt_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NumericalBreakdown("matrix is not positive definite".into()));
    }
    let sqrt = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let inv_sqrt = sqrt.map(|s| 1.0 / s);
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&sqrt) * q.transpose();
    let inv_root = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    Ok((symmetric_part(&root), symmetric_part(&inv_root)))
}

/// Symmetric square root of a PSD matrix, negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetric_part(m));
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    symmetric_part(&(q * DMatrix::from_diagonal(&root) * q.transpose()))
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetry and PSD check, tolerance relative to the largest absolute entry.
pub fn check_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> std::result::Result<(), String> {
    if !m.is_square() {
        return Err(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err("matrix has non-finite entries".into());
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > tol * scale {
        return Err(format!("matrix is not symmetric (max asymmetry {asym:e})"));
    }
    let eig = SymmetricEigen::new(symmetric_part(m));
    let min = eig.eigenvalues.min();
    if min < -tol * scale {
        return Err(format!("matrix is not positive semidefinite (min eigenvalue {min:e})"));
    }
    Ok(())
}

/// Logarithmically spaced grid, endpoints included.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && points >= 1);
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn kron_and_dense_products_agree() {
        let (tasks, d) = (3, 4);
        let a = BlockMatrix::kron(random_matrix(tasks, tasks, 1), d);
        let b = BlockMatrix::dense(random_matrix(tasks * d, tasks * d, 2), tasks, d);
        let dense_a = a.clone().into_dense();
        assert!(a.mul(&b).max_abs_diff(&dense_a.mul(&b)) < 1e-12);
        assert!(b.mul(&a).max_abs_diff(&b.mul(&dense_a)) < 1e-12);
        assert!((a.trace_product(&b) - dense_a.trace_product(&b)).abs() < 1e-12);
        assert!((b.trace_product(&a) - (b.to_dense() * a.to_dense()).trace()).abs() < 1e-12);
        let k2 = BlockMatrix::kron(random_matrix(tasks, tasks, 3), d);
        assert!(a.mul(&k2).max_abs_diff(&dense_a.mul(&k2.clone().into_dense())) < 1e-12);
    }

    #[test]
    fn quadratic_trace_matches_dense() {
        let (tasks, d, q) = (2, 5, 3);
        let c = random_matrix(tasks, tasks, 4);
        let w = random_matrix(tasks * d, q, 5);
        let k = BlockMatrix::kron(c, d);
        let dense = (w.transpose() * k.to_dense() * &w).trace();
        assert!((k.quadratic_trace(&w) - dense).abs() < 1e-12);
        let gram = task_gram(&w, tasks, d);
        assert!((k.quadratic_trace_from_gram(&gram).unwrap() - dense).abs() < 1e-12);
    }

    #[test]
    fn sqrt_pair_squares_back() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.5, 0.5, 3.0, 0.5, 0.5, 0.5, 1.5]);
        let (r, ir) = sym_sqrt_pair(&g).unwrap();
        assert!((&r * &r - &g).amax() < 1e-12);
        assert!((&r * &ir - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn psd_check_flags_violations() {
        let good = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        assert!(check_symmetric_psd(&good, 1e-12).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(check_symmetric_psd(&asym, 1e-12).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_symmetric_psd(&indefinite, 1e-12).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e3, 7);
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[6] - 1e3).abs() < 1e-9);
        assert!((g[3] - 1.0).abs() < 1e-12);
    }
}

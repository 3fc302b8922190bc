//! Small dense helpers for information matrices (dimension ≤ 4).

use nalgebra::{DMatrix, DVector};

/// Eigenvalues below `PINV_CUTOFF · λ_max` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Relative residual tolerance for `c ∈ Range(M)`.
pub const ESTIMABLE_TOL: f64 = 1e-8;
/// Cholesky pivots below this fraction of the largest diagonal entry send the
/// computation down the spectral path.
const CHOL_PIVOT_TOL: f64 = 1e-8;

pub const MAX_DIM: usize = 4;

/// Moore–Penrose inverse of a symmetric PSD matrix via its spectral
/// decomposition. The flag reports whether any eigenvalue was truncated.
pub fn pinv_sym(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let lmax = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cut = PINV_CUTOFF * lmax;
    let mut out = DMatrix::zeros(n, n);
    let mut truncated = false;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        } else {
            truncated = true;
        }
    }
    (out, truncated)
}

/// `c'M⁻c` with the Moore–Penrose inverse, or `None` when `c ∉ Range(M)`.
pub fn quad_form_pinv(m: &DMatrix<f64>, c: &DVector<f64>) -> Option<f64> {
    let (g, _) = pinv_sym(m);
    let gc = &g * c;
    let resid = c - m * &gc;
    if resid.norm() >= ESTIMABLE_TOL * c.norm() {
        return None;
    }
    Some(c.dot(&gc))
}

/// Symmetric matrix of dimension `dim ≤ 4` stored row-major on the stack.
#[derive(Debug, Clone, Copy)]
pub struct SmallSym {
    pub dim: usize,
    pub a: [f64; MAX_DIM * MAX_DIM],
}

impl SmallSym {
    pub fn zeros(dim: usize) -> Self {
        debug_assert!(dim <= MAX_DIM);
        Self {
            dim,
            a: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn outer(v: &[f64]) -> Self {
        let mut s = Self::zeros(v.len());
        for i in 0..v.len() {
            for j in 0..v.len() {
                s.a[i * MAX_DIM + j] = v[i] * v[j];
            }
        }
        s
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * MAX_DIM + j]
    }

    /// `self += w · other`
    #[inline]
    pub fn add_scaled(&mut self, w: f64, other: &SmallSym) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.a[i * MAX_DIM + j] += w * other.a[i * MAX_DIM + j];
            }
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Solves `M x = c` by Cholesky. Returns `None` if a pivot is too small
    /// relative to the diagonal, i.e. the matrix is (numerically) singular.
    pub fn cholesky_solve(&self, c: &[f64]) -> Option<[f64; MAX_DIM]> {
        let n = self.dim;
        let mut l = [0.0; MAX_DIM * MAX_DIM];
        let dmax = (0..n).fold(0.0_f64, |acc, i| acc.max(self.get(i, i)));
        if !(dmax > 0.0) {
            return None;
        }
        for j in 0..n {
            let mut s = self.get(j, j);
            for k in 0..j {
                s -= l[j * MAX_DIM + k] * l[j * MAX_DIM + k];
            }
            if !(s > CHOL_PIVOT_TOL * dmax) {
                return None;
            }
            let ljj = s.sqrt();
            l[j * MAX_DIM + j] = ljj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * MAX_DIM + k] * l[j * MAX_DIM + k];
                }
                l[i * MAX_DIM + j] = s / ljj;
            }
        }
        let mut y = [0.0; MAX_DIM];
        for i in 0..n {
            let mut s = c[i];
            for k in 0..i {
                s -= l[i * MAX_DIM + k] * y[k];
            }
            y[i] = s / l[i * MAX_DIM + i];
        }
        let mut x = [0.0; MAX_DIM];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * MAX_DIM + i] * x[k];
            }
            x[i] = s / l[i * MAX_DIM + i];
        }
        Some(x)
    }

    /// `c'M⁻c`: Cholesky when well conditioned, otherwise the spectral
    /// pseudo-inverse with an estimability check.
    pub fn quad_form_inv(&self, c: &[f64]) -> Option<f64> {
        if let Some(x) = self.cholesky_solve(c) {
            return Some((0..self.dim).map(|i| c[i] * x[i]).sum());
        }
        quad_form_pinv(&self.to_dmatrix(), &DVector::from_column_slice(c))
    }
}

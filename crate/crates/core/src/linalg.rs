//! Dense symmetric linear algebra shared by the models.
//!
//! Eigendecompositions come from nalgebra's symmetric QR solver; this module
//! adds a descending order, a deterministic sign convention, and the jitter
//! policy used for every inverse in the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{input, Error, Result};

/// Default relative jitter: `ε = jitter_scale · trace(M) / m`.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Eigenvalues below `-NOT_PSD_TOL · ‖M‖` are rejected.
const NOT_PSD_TOL: f64 = 1e-6;

/// Symmetric eigendecomposition, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    /// Columns aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()))
    }
}

/// Eigendecomposition of `(M + Mᵀ)/2`.
///
/// Eigenvalues are sorted descending (stable for ties) and every eigenvector
/// is flipped so its first non-negligible component is positive.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEig> {
    if !m.is_square() {
        return input(format!("sym_eig needs a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return input("matrix has non-finite entries");
    }
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &v);
    }
    Ok(SymEig { eigenvalues, eigenvectors })
}

fn jitter_for(m: &DMatrix<f64>, jitter_scale: f64) -> f64 {
    let n = m.nrows().max(1) as f64;
    jitter_scale * (m.trace().abs() / n)
}

fn check_psd(eig: &SymEig) -> Result<f64> {
    let scale = eig.spectral_norm();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NOT_PSD_TOL * scale {
        return Err(Error::NotPsd { min_eig: min, scale });
    }
    Ok(scale)
}

/// `(M + εI)^{-1/2}` with `ε = jitter_scale · trace(M)/m`.
///
/// Slightly negative eigenvalues (rounding) are clamped to zero.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, jitter_scale: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(m)?;
    check_psd(&eig)?;
    let eps = jitter_for(m, jitter_scale);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let l = l.max(0.0) + eps;
        if l <= 0.0 {
            return Err(Error::Singular("zero eigenvalue in inverse square root".into()));
        }
        scaled.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    Ok(scaled * eig.eigenvectors.transpose())
}

/// Inverse square root restricted to the numerical range of `M`.
///
/// Returns `U_r Λ_r^{-1/2}` (an `m × r` matrix) built from the eigenpairs
/// whose eigenvalue exceeds `jitter_scale · trace(M)/m`, together with
/// those eigenvalues. `Sᵀ M S = I_r` up to rounding.
pub fn range_inv_sqrt_psd(m: &DMatrix<f64>, jitter_scale: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let eig = sym_eig(m)?;
    check_psd(&eig)?;
    let tol = jitter_for(m, jitter_scale).max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&j| eig.eigenvalues[j] > tol).collect();
    let mut s = DMatrix::zeros(m.nrows(), keep.len());
    for (dst, &j) in keep.iter().enumerate() {
        let l = eig.eigenvalues[j];
        s.set_column(dst, &(eig.eigenvectors.column(j) / l.sqrt()));
    }
    Ok((s, keep.iter().map(|&j| eig.eigenvalues[j]).collect()))
}

/// `(K + λI)⁻¹ B` via Cholesky, with one step of iterative refinement.
pub fn ridge_solve(k: &DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !k.is_square() || k.nrows() != b.nrows() {
        return input(format!(
            "ridge_solve shape mismatch: K is {}x{}, B is {}x{}",
            k.nrows(),
            k.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    if !(lambda >= 0.0) {
        return input(format!("ridge parameter must be >= 0, got {lambda}"));
    }
    let mut a = (k + k.transpose()) * 0.5;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let factor = PsdFactor::from_shifted(a)?;
    Ok(factor.solve(b))
}

/// Cholesky factorization of a shifted PSD matrix, reused across solves.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PsdFactor {
    /// Factorizes `K + εI` with `ε = jitter_scale · trace(K)/m`.
    pub fn new(k: &DMatrix<f64>, jitter_scale: f64) -> Result<Self> {
        if !k.is_square() {
            return input("factorization needs a square matrix");
        }
        if k.iter().any(|v| !v.is_finite()) {
            return input("matrix has non-finite entries");
        }
        let eps = jitter_for(k, jitter_scale);
        let mut a = (k + k.transpose()) * 0.5;
        for i in 0..a.nrows() {
            a[(i, i)] += eps;
        }
        Self::from_shifted(a)
    }

    /// Factorizes `K + shift·I` exactly (no relative jitter).
    pub fn with_shift(k: &DMatrix<f64>, shift: f64) -> Result<Self> {
        if !k.is_square() {
            return input("factorization needs a square matrix");
        }
        let mut a = (k + k.transpose()) * 0.5;
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        Self::from_shifted(a)
    }

    fn from_shifted(a: DMatrix<f64>) -> Result<Self> {
        match Cholesky::new(a.clone()) {
            Some(chol) => Ok(Self { matrix: a, chol }),
            None => Err(Error::Singular(format!(
                "Cholesky factorization of a {}x{} matrix failed",
                a.nrows(),
                a.ncols()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The factorized (shifted) matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `A⁻¹ B` for the factorized matrix `A`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = self.chol.solve(b);
        let r = b - &self.matrix * &x;
        x += self.chol.solve(&r);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(b);
        let r = b - &self.matrix * &x;
        x += self.chol.solve(&r);
        x
    }

    /// `Tr(Z A⁻¹ Zᵀ)` for an `h × m` matrix `Z`.
    pub fn trace_quad(&self, z: &DMatrix<f64>) -> f64 {
        let y = self.solve(&z.transpose());
        z.transpose().component_mul(&y).sum()
    }
}

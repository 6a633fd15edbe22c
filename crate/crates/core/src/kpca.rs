//! Kernel PCA with out-of-sample projection.
//!
//! `K_c = HKH` with `H = I − 11ᵀ/n`; component `j` has coefficients
//! `vⱼ/√λⱼ`, so each principal direction has unit RKHS norm. New points are
//! centered with the stored training row means and grand mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_self, kernel_vector, KernelSpec};
use crate::linalg::sym_eig;

/// Eigenvalues at or below this fraction of `trace(K_c)` count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpcaModel {
    /// `n × h` projection coefficients.
    pub alphas: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub x_train: DMatrix<f64>,
    pub spec: KernelSpec,
    pub row_means: DVector<f64>,
    pub total_mean: f64,
}

pub fn center_gram(k: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = k.nrows();
    let row_means = DVector::from_iterator(n, k.row_iter().map(|r| r.sum() / n as f64));
    let total = row_means.sum() / n as f64;
    let kc = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + total);
    (kc, row_means, total)
}

/// Numerical rank of a centered Gram matrix.
pub fn centered_rank(kc: &DMatrix<f64>) -> Result<usize> {
    let eig = sym_eig(kc)?;
    let tol = RANK_TOL * kc.trace().abs();
    Ok(eig.eigenvalues.iter().filter(|&&l| l > tol && l > 0.0).count())
}

pub fn fit_kpca(x: &DMatrix<f64>, spec: &KernelSpec, h: usize) -> Result<KpcaModel> {
    let n = x.ncols();
    if h == 0 || h > n {
        return input(format!("need 1 <= h <= n = {n}, got {h}"));
    }
    let k = gram_self(spec, x)?;
    let (kc, row_means, total_mean) = center_gram(&k);
    let eig = sym_eig(&kc)?;
    let tol = RANK_TOL * kc.trace().abs();
    let rank = eig.eigenvalues.iter().filter(|&&l| l > tol && l > 0.0).count();
    if rank < h {
        return Err(Error::Rank { requested: h, rank });
    }
    let mut alphas = DMatrix::zeros(n, h);
    for j in 0..h {
        alphas.set_column(j, &(eig.eigenvectors.column(j) / eig.eigenvalues[j].sqrt()));
    }
    Ok(KpcaModel {
        alphas,
        eigenvalues: eig.eigenvalues.iter().take(h).copied().collect(),
        x_train: x.clone(),
        spec: *spec,
        row_means,
        total_mean,
    })
}

impl KpcaModel {
    pub fn h(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn dim(&self) -> usize {
        self.x_train.nrows()
    }

    fn center_cross(&self, kx: &mut DMatrix<f64>) {
        let n = self.x_train.ncols() as f64;
        for mut c in kx.column_iter_mut() {
            let mean = c.sum() / n;
            for (i, v) in c.iter_mut().enumerate() {
                *v += -mean - self.row_means[i] + self.total_mean;
            }
        }
    }

    pub fn embed(&self, x_star: &[f64]) -> Result<DVector<f64>> {
        if x_star.len() != self.dim() {
            return input(format!("expected a {}-vector, got {}", self.dim(), x_star.len()));
        }
        let kv = kernel_vector(&self.spec, &self.x_train, x_star)?;
        let mut kx = DMatrix::from_vec(kv.len(), 1, kv);
        self.center_cross(&mut kx);
        Ok(self.alphas.tr_mul(&kx).column(0).into_owned())
    }

    pub fn embed_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return input(format!("expected {}-dimensional points, got {}", self.dim(), x.nrows()));
        }
        let mut kx = gram(&self.spec, &self.x_train, x)?;
        self.center_cross(&mut kx);
        Ok(self.alphas.tr_mul(&kx))
    }

    /// Training embeddings, `alphasᵀ K_c`.
    pub fn training_embedding(&self) -> Result<DMatrix<f64>> {
        let k = gram_self(&self.spec, &self.x_train)?;
        let (kc, _, _) = center_gram(&k);
        Ok(self.alphas.tr_mul(&kc))
    }

    /// `Tr(alphasᵀ K_c alphas)`; equals `h`.
    pub fn norm_sq(&self) -> Result<f64> {
        let k = gram_self(&self.spec, &self.x_train)?;
        let (kc, _, _) = center_gram(&k);
        Ok((self.alphas.transpose() * kc * &self.alphas).trace())
    }
}

//! Closed-form contrastive kernel learning.
//!
//! The embedding `f(x) = Wᵀφ(x)` minimizes `Σᵢ f(xᵢ)ᵀ(f(xᵢ⁻) − f(xᵢ⁺))`
//! subject to `WᵀW = I_h`. Writing `W = [Φ, Δ]A` with `Δ = Φ⁻ − Φ⁺` turns
//! this into a generalized eigenproblem on two `2n × 2n` kernel matrices:
//!
//! ```text
//! K₃ = K₋ − K₊          K_Δ = K₋₋ + K₊₊ − K₋₊ − K₋₊ᵀ
//! K₁ = [[K, K₃], [K₃ᵀ, K_Δ]]
//! B  = [K₃; K_Δ]·[K, K₃]   K₂ = −½(B + Bᵀ)
//! ```
//!
//! `A = K₁^{-1/2} A₂` where `A₂` holds the top `h` eigenvectors of
//! `K₁^{-1/2} K₂ K₁^{-1/2}`. The inverse square root is taken on the
//! numerical range of `K₁`; directions outside it do not change `W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::TripletSet;
use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_self, kernel_vector, KernelSpec};
use crate::linalg::{range_inv_sqrt_psd, sym_eig};

/// The matrices entering the closed-form solution.
#[derive(Debug, Clone)]
pub struct ContrastiveSystem {
    pub k: DMatrix<f64>,
    pub k3: DMatrix<f64>,
    pub k_delta: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k2: DMatrix<f64>,
}

/// Builds `K₁` and `K₂` (plus intermediates) from a triplet set.
pub fn assemble_system(triplets: &TripletSet, spec: &KernelSpec) -> Result<ContrastiveSystem> {
    let TripletSet { anchors: x, positives: xp, negatives: xn, .. } = triplets;
    if x.shape() != xp.shape() || x.shape() != xn.shape() {
        return input("triplet matrices must have equal shapes");
    }
    let n = x.ncols();
    let k = gram_self(spec, x)?;
    let k_minus = gram(spec, x, xn)?;
    let k_plus = gram(spec, x, xp)?;
    let k_mm = gram_self(spec, xn)?;
    let k_pp = gram_self(spec, xp)?;
    let k_mp = gram(spec, xn, xp)?;

    let k3 = &k_minus - &k_plus;
    let k_delta = &k_mm + &k_pp - &k_mp - k_mp.transpose();

    let mut k1 = DMatrix::zeros(2 * n, 2 * n);
    k1.view_mut((0, 0), (n, n)).copy_from(&k);
    k1.view_mut((0, n), (n, n)).copy_from(&k3);
    k1.view_mut((n, 0), (n, n)).copy_from(&k3.transpose());
    k1.view_mut((n, n), (n, n)).copy_from(&k_delta);
    // the K_Δ block is symmetric analytically; remove rounding asymmetry
    let k1 = (&k1 + k1.transpose()) * 0.5;

    let mut left = DMatrix::zeros(2 * n, n);
    left.rows_mut(0, n).copy_from(&k3);
    left.rows_mut(n, n).copy_from(&k_delta);
    let mut right = DMatrix::zeros(n, 2 * n);
    right.columns_mut(0, n).copy_from(&k);
    right.columns_mut(n, n).copy_from(&k3);
    let b = left * right;
    let k2 = (&b + b.transpose()) * -0.5;

    Ok(ContrastiveSystem { k, k3, k_delta, k1, b, k2 })
}

/// `(K₁, K₂)` for a triplet set.
pub fn assemble_k1_k2(triplets: &TripletSet, spec: &KernelSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = assemble_system(triplets, spec)?;
    Ok((s.k1, s.k2))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimpleContrastiveModel {
    /// `2n × h` coefficients; `W = [Φ, Δ]A`.
    pub a: DMatrix<f64>,
    pub triplets: TripletSet,
    pub spec: KernelSpec,
    pub h: usize,
    /// Top `h` eigenvalues of the whitened `K₂`, descending.
    pub top_eigenvalues: Vec<f64>,
    /// Set when fewer than `h` of the selected eigenvalues are non-negative.
    pub negative_eigenvalue_warning: bool,
}

impl SimpleContrastiveModel {
    /// Training loss at the optimum: minus the sum of the top `h` eigenvalues.
    pub fn objective(&self) -> f64 {
        -self.top_eigenvalues.iter().sum::<f64>()
    }

    pub fn dim(&self) -> usize {
        self.triplets.dim()
    }

    /// `z* = Aᵀ [k(x*, X); k(x*, X⁻) − k(x*, X⁺)]`.
    pub fn embed(&self, x_star: &[f64]) -> Result<DVector<f64>> {
        if x_star.len() != self.dim() {
            return input(format!("expected a {}-vector, got {}", self.dim(), x_star.len()));
        }
        let n = self.triplets.len();
        let ka = kernel_vector(&self.spec, &self.triplets.anchors, x_star)?;
        let kn = kernel_vector(&self.spec, &self.triplets.negatives, x_star)?;
        let kp = kernel_vector(&self.spec, &self.triplets.positives, x_star)?;
        let mut v = DVector::zeros(2 * n);
        for i in 0..n {
            v[i] = ka[i];
            v[n + i] = kn[i] - kp[i];
        }
        Ok(self.a.tr_mul(&v))
    }

    /// Embeds every column of `x` (`d × m` → `h × m`).
    pub fn embed_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return input(format!("expected {}-dimensional points, got {}", self.dim(), x.nrows()));
        }
        let ka = gram(&self.spec, &self.triplets.anchors, x)?;
        let kn = gram(&self.spec, &self.triplets.negatives, x)?;
        let kp = gram(&self.spec, &self.triplets.positives, x)?;
        let n = self.triplets.len();
        let mut stacked = DMatrix::zeros(2 * n, x.ncols());
        stacked.rows_mut(0, n).copy_from(&ka);
        stacked.rows_mut(n, n).copy_from(&(kn - kp));
        Ok(self.a.tr_mul(&stacked))
    }
}

/// Fits the closed-form model.
pub fn fit_simple(triplets: &TripletSet, spec: &KernelSpec, h: usize, jitter_scale: f64) -> Result<SimpleContrastiveModel> {
    let n = triplets.len();
    if h == 0 || h > n {
        return input(format!("embedding dimension must satisfy 1 <= h <= n = {n}, got {h}"));
    }
    let sys = assemble_system(triplets, spec)?;
    let (s, _) = range_inv_sqrt_psd(&sys.k1, jitter_scale)?;
    let rank = s.ncols();
    if rank < h {
        return Err(Error::Rank { requested: h, rank });
    }
    let whitened = s.transpose() * &sys.k2 * &s;
    let eig = sym_eig(&whitened)?;
    let a2 = eig.eigenvectors.columns(0, h).into_owned();
    let top: Vec<f64> = eig.eigenvalues.iter().take(h).copied().collect();
    let warn = top.iter().any(|&l| l < 0.0);
    Ok(SimpleContrastiveModel {
        a: s * a2,
        triplets: triplets.clone(),
        spec: *spec,
        h,
        negative_eigenvalue_warning: warn,
        top_eigenvalues: top,
    })
}

/// `Σᵢ f(xᵢ)ᵀ(f(xᵢ⁻) − f(xᵢ⁺))` evaluated through the coefficients: `Tr(Aᵀ B A)`.
pub fn coefficient_objective(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * b * a).trace()
}

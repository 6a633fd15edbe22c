//! Spectral contrastive kernel learning by gradient descent on the `3n`
//! training embeddings.
//!
//! Columns of `Z ∈ ℝ^{h×3n}` are ordered anchors, positives, negatives. The
//! loss is
//!
//! ```text
//! Σᵢ −2 zᵢᵀz_{i+n} + (zᵢᵀz_{i+2n})² + λ Tr(Z K⁻¹ Zᵀ)
//! ```
//!
//! and a new point maps to `Z K⁻¹ k(P, x*)` with `P = [X, X⁺, X⁻]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{rng, TripletSet};
use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_self, kernel_vector, KernelSpec};
use crate::linalg::{PsdFactor, DEFAULT_JITTER};
use crate::optim::{descend, DescentConfig, DescentTrace, Problem};

/// Loss and gradient for a fixed kernel matrix.
#[derive(Debug, Clone)]
pub struct SpectralObjective {
    factor: PsdFactor,
    lambda: f64,
    n: usize,
}

impl SpectralObjective {
    pub fn new(k: &DMatrix<f64>, lambda: f64, jitter_scale: f64) -> Result<Self> {
        if !k.is_square() || k.nrows() % 3 != 0 || k.nrows() == 0 {
            return input(format!("kernel matrix must be 3n x 3n, got {}x{}", k.nrows(), k.ncols()));
        }
        if !(lambda >= 0.0) {
            return input("lambda must be >= 0");
        }
        Ok(Self { factor: PsdFactor::new(k, jitter_scale)?, lambda, n: k.nrows() / 3 })
    }

    fn check(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != 3 * self.n || z.nrows() == 0 {
            return input(format!("Z must be h x {}, got {}x{}", 3 * self.n, z.nrows(), z.ncols()));
        }
        Ok(())
    }

    pub fn loss(&self, z: &DMatrix<f64>) -> Result<f64> {
        self.check(z)?;
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            let a = z.column(i);
            total += -2.0 * a.dot(&z.column(i + n)) + a.dot(&z.column(i + 2 * n)).powi(2);
        }
        if self.lambda != 0.0 {
            total += self.lambda * self.factor.trace_quad(z);
        }
        Ok(total)
    }

    pub fn grad(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let n = self.n;
        let mut g = if self.lambda != 0.0 {
            self.factor.solve(&z.transpose()).transpose() * (2.0 * self.lambda)
        } else {
            DMatrix::zeros(z.nrows(), z.ncols())
        };
        for i in 0..n {
            let (a, p, q) = (z.column(i), z.column(i + n), z.column(i + 2 * n));
            let s = a.dot(&q);
            let ga = p * -2.0 + q * (2.0 * s);
            let gp = a * -2.0;
            let gq = a * (2.0 * s);
            let mut c = g.column_mut(i);
            c += &ga;
            let mut c = g.column_mut(i + n);
            c += &gp;
            let mut c = g.column_mut(i + 2 * n);
            c += &gq;
        }
        Ok(g)
    }

    /// `Tr(Z K⁻¹ Zᵀ)`, the squared RKHS norm of the implicit `W = Φ K⁻¹ Zᵀ`.
    pub fn norm_sq(&self, z: &DMatrix<f64>) -> f64 {
        self.factor.trace_quad(z)
    }
}

/// Loss with the default jitter.
pub fn spectral_loss(z: &DMatrix<f64>, k: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    SpectralObjective::new(k, lambda, DEFAULT_JITTER)?.loss(z)
}

/// Gradient with the default jitter.
pub fn spectral_grad(z: &DMatrix<f64>, k: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    SpectralObjective::new(k, lambda, DEFAULT_JITTER)?.grad(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub h: usize,
    pub lambda: f64,
    pub jitter_scale: f64,
    pub init_sd: f64,
    pub descent: DescentConfig,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            h: 2,
            lambda: 1.0,
            jitter_scale: DEFAULT_JITTER,
            init_sd: 0.1,
            descent: DescentConfig { step: 1e-2, max_iters: 2000, tol: 1e-6, backtracking: true },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpectralModelData", into = "SpectralModelData")]
pub struct SpectralModel {
    /// `h × 3n` training embeddings.
    pub z: DMatrix<f64>,
    /// `d × 3n` retained points `[X, X⁺, X⁻]`.
    pub points: DMatrix<f64>,
    pub spec: KernelSpec,
    pub lambda: f64,
    pub jitter_scale: f64,
    pub trace: DescentTrace,
    factor: PsdFactor,
}

#[derive(Serialize, Deserialize)]
struct SpectralModelData {
    z: DMatrix<f64>,
    points: DMatrix<f64>,
    spec: KernelSpec,
    lambda: f64,
    jitter_scale: f64,
    trace: DescentTrace,
}

impl TryFrom<SpectralModelData> for SpectralModel {
    type Error = Error;
    fn try_from(d: SpectralModelData) -> Result<Self> {
        SpectralModel::from_parts(d.z, d.points, d.spec, d.lambda, d.jitter_scale, d.trace)
    }
}

impl From<SpectralModel> for SpectralModelData {
    fn from(m: SpectralModel) -> Self {
        Self { z: m.z, points: m.points, spec: m.spec, lambda: m.lambda, jitter_scale: m.jitter_scale, trace: m.trace }
    }
}

impl SpectralModel {
    pub fn from_parts(
        z: DMatrix<f64>,
        points: DMatrix<f64>,
        spec: KernelSpec,
        lambda: f64,
        jitter_scale: f64,
        trace: DescentTrace,
    ) -> Result<Self> {
        if z.ncols() != points.ncols() || points.ncols() % 3 != 0 {
            return input("Z and the retained points must both have 3n columns");
        }
        let k = gram_self(&spec, &points)?;
        let factor = PsdFactor::new(&k, jitter_scale)?;
        Ok(Self { z, points, spec, lambda, jitter_scale, trace, factor })
    }

    pub fn h(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    /// `z* = Z K⁻¹ k(P, x*)`.
    pub fn embed(&self, x_star: &[f64]) -> Result<DVector<f64>> {
        if x_star.len() != self.dim() {
            return input(format!("expected a {}-vector, got {}", self.dim(), x_star.len()));
        }
        let kv = DVector::from_vec(kernel_vector(&self.spec, &self.points, x_star)?);
        Ok(&self.z * self.factor.solve_vec(&kv))
    }

    pub fn embed_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return input(format!("expected {}-dimensional points, got {}", self.dim(), x.nrows()));
        }
        let kx = gram(&self.spec, &self.points, x)?;
        Ok(&self.z * self.factor.solve(&kx))
    }

    /// `Tr(Z K⁻¹ Zᵀ)`.
    pub fn norm_sq(&self) -> f64 {
        self.factor.trace_quad(&self.z)
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.best_value
    }
}

struct SpectralProblem<'a>(&'a SpectralObjective);

impl Problem for SpectralProblem<'_> {
    fn value(&self, z: &DMatrix<f64>) -> Result<f64> {
        self.0.loss(z)
    }
    fn gradient(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.0.grad(z)
    }
}

/// Gradient descent from a small seeded Gaussian initialization.
pub fn fit_spectral(triplets: &TripletSet, spec: &KernelSpec, cfg: &SpectralConfig, seed: u64) -> Result<SpectralModel> {
    if !(cfg.lambda > 0.0) {
        return input(format!("lambda must be > 0, got {}", cfg.lambda));
    }
    if cfg.h == 0 {
        return input("h must be >= 1");
    }
    cfg.descent.validate()?;
    let points = triplets.stacked();
    let k = gram_self(spec, &points)?;
    let objective = SpectralObjective::new(&k, cfg.lambda, cfg.jitter_scale)?;
    let mut rng = rng(seed);
    let z0 = DMatrix::from_fn(cfg.h, points.ncols(), |_, _| cfg.init_sd * rng.sample::<f64, _>(StandardNormal));
    let (z, trace) = descend(&SpectralProblem(&objective), z0, &cfg.descent, |z| z)?;
    Ok(SpectralModel {
        z,
        points,
        spec: *spec,
        lambda: cfg.lambda,
        jitter_scale: cfg.jitter_scale,
        trace,
        factor: objective.factor,
    })
}

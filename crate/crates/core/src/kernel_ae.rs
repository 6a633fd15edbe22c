//! Kernel autoencoder.
//!
//! Encoder and decoder are linear maps on RKHS features. After the
//! representer substitution the model is fully described by the bottleneck
//! `Z ∈ ℝ^{h×n}` (unit-norm columns), and the objective reads
//!
//! ```text
//! ‖Q(Z) − X‖² + λ Tr(Z K_X⁻¹ Zᵀ + Q K_Z⁻¹ Qᵀ),   Q(Z) = X (K_Z + λI)⁻¹ K_Z
//! ```
//!
//! The decoder trace is evaluated as `Tr(X R K_Z R Xᵀ)` with
//! `R = (K_Z + λI)⁻¹`, which never inverts `K_Z`. Substituting `Q` the whole
//! objective collapses to `λ [Tr(X R Xᵀ) + Tr(Z K_X⁻¹ Zᵀ)]`; the gradient is
//! taken from that form.
//!
//! In de-noising mode the encoder sees corrupted inputs `X̄` while the
//! decoder still targets the clean `X`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::rng;
use crate::error::{input, Error, Result};
use crate::kernels::{col, gram, gram_self, kernel_vector, KernelFamily, KernelSpec};
use crate::kpca::fit_kpca;
use crate::linalg::{ridge_solve, PsdFactor, DEFAULT_JITTER};
use crate::optim::{descend, DescentConfig, DescentTrace, Problem};

/// `Q = X (K_Z + λI)⁻¹ K_Z`.
pub fn ae_reconstruction(z: &DMatrix<f64>, x: &DMatrix<f64>, spec_dec: &KernelSpec, lambda: f64) -> Result<DMatrix<f64>> {
    if z.ncols() != x.ncols() {
        return input(format!("Z has {} columns but X has {}", z.ncols(), x.ncols()));
    }
    if !(lambda > 0.0) {
        return input("lambda must be > 0");
    }
    let kz = gram_self(spec_dec, z)?;
    Ok(x * ridge_solve(&kz, lambda, &kz)?)
}

/// Objective, reconstruction and gradient for fixed training data.
#[derive(Debug, Clone)]
pub struct AeObjective {
    x_train: DMatrix<f64>,
    spec_dec: KernelSpec,
    lambda: f64,
    enc_factor: PsdFactor,
}

/// The three summands of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeTerms {
    pub reconstruction: f64,
    /// `Tr(Z K_X⁻¹ Zᵀ)`
    pub encoder_norm: f64,
    /// `Tr(Q K_Z⁻¹ Qᵀ)`
    pub decoder_norm: f64,
}

impl AeTerms {
    pub fn total(&self, lambda: f64) -> f64 {
        self.reconstruction + lambda * (self.encoder_norm + self.decoder_norm)
    }
}

struct Decoded {
    kz: DMatrix<f64>,
    /// `R Xᵀ`, `n × d`.
    rxt: DMatrix<f64>,
}

impl AeObjective {
    /// `x_train` are the reconstruction targets, `x_enc` the encoder inputs.
    pub fn new(
        x_train: &DMatrix<f64>,
        x_enc: &DMatrix<f64>,
        spec_enc: &KernelSpec,
        spec_dec: &KernelSpec,
        lambda: f64,
        jitter_scale: f64,
    ) -> Result<Self> {
        if x_train.ncols() != x_enc.ncols() {
            return input("targets and encoder inputs must have the same number of samples");
        }
        if !(lambda > 0.0) {
            return input(format!("lambda must be > 0, got {lambda}"));
        }
        spec_dec.validate()?;
        let kx = gram_self(spec_enc, x_enc)?;
        Ok(Self { x_train: x_train.clone(), spec_dec: *spec_dec, lambda, enc_factor: PsdFactor::new(&kx, jitter_scale)? })
    }

    pub fn n(&self) -> usize {
        self.x_train.ncols()
    }

    fn check(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.n() || z.nrows() == 0 {
            return input(format!("Z must be h x {}, got {}x{}", self.n(), z.nrows(), z.ncols()));
        }
        Ok(())
    }

    fn decode(&self, z: &DMatrix<f64>) -> Result<Decoded> {
        let kz = gram_self(&self.spec_dec, z)?;
        let factor = PsdFactor::with_shift(&kz, self.lambda)?;
        let rxt = factor.solve(&self.x_train.transpose());
        Ok(Decoded { kz, rxt })
    }

    pub fn reconstruction(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let dec = self.decode(z)?;
        // Q = X − λ X R
        Ok(&self.x_train - dec.rxt.transpose() * self.lambda)
    }

    pub fn terms(&self, z: &DMatrix<f64>) -> Result<AeTerms> {
        self.check(z)?;
        let dec = self.decode(z)?;
        let resid = &dec.rxt * self.lambda;
        Ok(AeTerms {
            reconstruction: resid.norm_squared(),
            encoder_norm: self.enc_factor.trace_quad(z),
            decoder_norm: (dec.rxt.transpose() * &dec.kz * &dec.rxt).trace(),
        })
    }

    pub fn objective(&self, z: &DMatrix<f64>) -> Result<f64> {
        Ok(self.terms(z)?.total(self.lambda))
    }

    /// Gradient of the objective with respect to `Z` (no constraint).
    pub fn grad(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        if self.spec_dec.family == KernelFamily::ReluNtk {
            return Err(Error::Unsupported("relu_ntk decoder kernel has no gradient".into()));
        }
        let dec = self.decode(z)?;
        // dF/dK_Z = −λ R XᵀX R
        let gamma = &dec.rxt * dec.rxt.transpose() * (-self.lambda);
        let (h, n) = z.shape();
        let mut g = self.enc_factor.solve(&z.transpose()).transpose() * (2.0 * self.lambda);
        let mut buf = vec![0.0; h];
        for a in 0..n {
            let za = col(z, a);
            for j in 0..n {
                let w = gamma[(a, j)];
                if w == 0.0 {
                    continue;
                }
                self.spec_dec.grad_first(za, col(z, j), &mut buf)?;
                for t in 0..h {
                    g[(t, a)] += 2.0 * w * buf[t];
                }
            }
        }
        Ok(g)
    }
}

/// Unit-norm column projection; zero columns become the first basis vector.
pub fn normalize_columns(mut z: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in z.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        } else {
            c.fill(0.0);
            c[0] = 1.0;
        }
    }
    z
}

struct AeProblem<'a>(&'a AeObjective);

impl Problem for AeProblem<'_> {
    fn value(&self, z: &DMatrix<f64>) -> Result<f64> {
        self.0.objective(z)
    }
    fn gradient(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.0.grad(z)
    }
    fn stationarity(&self, z: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (zc, gc) in z.column_iter().zip(grad.column_iter()) {
            let radial = zc.dot(&gc);
            total += (gc - zc * radial).norm_squared();
        }
        total.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeInit {
    /// Normalized Kernel PCA embedding, falling back to random on failure.
    Kpca,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub h: usize,
    pub lambda: f64,
    pub jitter_scale: f64,
    pub init: AeInit,
    pub descent: DescentConfig,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            h: 2,
            lambda: 1e-2,
            jitter_scale: DEFAULT_JITTER,
            init: AeInit::Kpca,
            descent: DescentConfig { step: 1e-2, max_iters: 1000, tol: 1e-6, backtracking: true },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "AeModelData", into = "AeModelData")]
pub struct KernelAeModel {
    /// `h × n`, unit-norm columns.
    pub z: DMatrix<f64>,
    /// Clean reconstruction targets.
    pub x_train: DMatrix<f64>,
    /// Encoder inputs (`x_train`, or its corrupted copy in de-noising mode).
    pub x_enc: DMatrix<f64>,
    pub spec_enc: KernelSpec,
    pub spec_dec: KernelSpec,
    pub lambda: f64,
    pub jitter_scale: f64,
    pub denoising: bool,
    pub trace: DescentTrace,
    enc_factor: PsdFactor,
    dec_factor: PsdFactor,
}

#[derive(Serialize, Deserialize)]
struct AeModelData {
    z: DMatrix<f64>,
    x_train: DMatrix<f64>,
    x_enc: DMatrix<f64>,
    spec_enc: KernelSpec,
    spec_dec: KernelSpec,
    lambda: f64,
    jitter_scale: f64,
    denoising: bool,
    trace: DescentTrace,
}

impl TryFrom<AeModelData> for KernelAeModel {
    type Error = Error;
    fn try_from(d: AeModelData) -> Result<Self> {
        KernelAeModel::from_parts(
            d.z,
            d.x_train,
            d.x_enc,
            d.spec_enc,
            d.spec_dec,
            d.lambda,
            d.jitter_scale,
            d.denoising,
            d.trace,
        )
    }
}

impl From<KernelAeModel> for AeModelData {
    fn from(m: KernelAeModel) -> Self {
        Self {
            z: m.z,
            x_train: m.x_train,
            x_enc: m.x_enc,
            spec_enc: m.spec_enc,
            spec_dec: m.spec_dec,
            lambda: m.lambda,
            jitter_scale: m.jitter_scale,
            denoising: m.denoising,
            trace: m.trace,
        }
    }
}

impl KernelAeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        z: DMatrix<f64>,
        x_train: DMatrix<f64>,
        x_enc: DMatrix<f64>,
        spec_enc: KernelSpec,
        spec_dec: KernelSpec,
        lambda: f64,
        jitter_scale: f64,
        denoising: bool,
        trace: DescentTrace,
    ) -> Result<Self> {
        if z.ncols() != x_train.ncols() || x_enc.shape() != x_train.shape() {
            return input("Z, targets and encoder inputs must share the sample count");
        }
        if !(lambda > 0.0) {
            return input("lambda must be > 0");
        }
        let kx = gram_self(&spec_enc, &x_enc)?;
        let kz = gram_self(&spec_dec, &z)?;
        Ok(Self {
            enc_factor: PsdFactor::new(&kx, jitter_scale)?,
            dec_factor: PsdFactor::with_shift(&kz, lambda)?,
            z,
            x_train,
            x_enc,
            spec_enc,
            spec_dec,
            lambda,
            jitter_scale,
            denoising,
            trace,
        })
    }

    pub fn h(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x_train.nrows()
    }

    /// `z* = Z K_X⁻¹ k(X_enc, x*)`. Not normalized.
    pub fn embed(&self, x_star: &[f64]) -> Result<DVector<f64>> {
        if x_star.len() != self.dim() {
            return input(format!("expected a {}-vector, got {}", self.dim(), x_star.len()));
        }
        let kv = DVector::from_vec(kernel_vector(&self.spec_enc, &self.x_enc, x_star)?);
        Ok(&self.z * self.enc_factor.solve_vec(&kv))
    }

    pub fn embed_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return input(format!("expected {}-dimensional points, got {}", self.dim(), x.nrows()));
        }
        let kx = gram(&self.spec_enc, &self.x_enc, x)?;
        Ok(&self.z * self.enc_factor.solve(&kx))
    }

    /// `x̂* = X (K_Z + λI)⁻¹ k(Z, z*)` with `z*` from [`Self::embed`].
    pub fn reconstruct(&self, x_star: &[f64]) -> Result<DVector<f64>> {
        let z_star = self.embed(x_star)?;
        let kv = DVector::from_vec(kernel_vector(&self.spec_dec, &self.z, z_star.as_slice())?);
        Ok(&self.x_train * self.dec_factor.solve_vec(&kv))
    }

    pub fn reconstruct_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let zs = self.embed_batch(x)?;
        let kz = gram(&self.spec_dec, &self.z, &zs)?;
        Ok(&self.x_train * self.dec_factor.solve(&kz))
    }

    /// Training reconstruction `Q`.
    pub fn training_reconstruction(&self) -> DMatrix<f64> {
        &self.x_train - self.dec_factor.solve(&self.x_train.transpose()).transpose() * self.lambda
    }

    /// `(‖W₁‖², ‖W₂‖²) = (Tr(Z K_X⁻¹ Zᵀ), Tr(Q K_Z⁻¹ Qᵀ))`.
    pub fn norms(&self) -> Result<(f64, f64)> {
        let rxt = self.dec_factor.solve(&self.x_train.transpose());
        let kz = gram_self(&self.spec_dec, &self.z)?;
        Ok((self.enc_factor.trace_quad(&self.z), (rxt.transpose() * kz * &rxt).trace()))
    }

    pub fn objective(&self) -> f64 {
        self.trace.best_value
    }
}

fn random_unit_columns(h: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    normalize_columns(DMatrix::from_fn(h, n, |_, _| rng.sample::<f64, _>(StandardNormal)))
}

fn initial_bottleneck(x_enc: &DMatrix<f64>, spec_enc: &KernelSpec, cfg: &AeConfig, seed: u64) -> DMatrix<f64> {
    let n = x_enc.ncols();
    if cfg.init == AeInit::Kpca {
        if let Ok(model) = fit_kpca(x_enc, spec_enc, cfg.h) {
            if let Ok(z) = model.training_embedding() {
                if z.column_iter().all(|c| c.norm() > 1e-12) {
                    return normalize_columns(z);
                }
            }
        }
    }
    random_unit_columns(cfg.h, n, seed)
}

/// Projected gradient descent: step, then renormalize every column of `Z`.
///
/// In de-noising mode pass the corrupted inputs as `x_noisy`; `x` stays the
/// reconstruction target.
pub fn fit_ae(
    x: &DMatrix<f64>,
    x_noisy: Option<&DMatrix<f64>>,
    spec_enc: &KernelSpec,
    spec_dec: &KernelSpec,
    cfg: &AeConfig,
    seed: u64,
) -> Result<KernelAeModel> {
    if cfg.h == 0 {
        return input("h must be >= 1");
    }
    if spec_dec.family == KernelFamily::ReluNtk {
        return Err(Error::Unsupported("relu_ntk is not supported as the decoder kernel".into()));
    }
    cfg.descent.validate()?;
    let x_enc = x_noisy.unwrap_or(x);
    if x_enc.shape() != x.shape() {
        return input("corrupted inputs must match the clean data shape");
    }
    let objective = AeObjective::new(x, x_enc, spec_enc, spec_dec, cfg.lambda, cfg.jitter_scale)?;
    let z0 = initial_bottleneck(x_enc, spec_enc, cfg, seed);
    let (z, trace) = descend(&AeProblem(&objective), z0, &cfg.descent, normalize_columns)?;
    let kz = gram_self(spec_dec, &z)?;
    Ok(KernelAeModel {
        enc_factor: objective.enc_factor,
        dec_factor: PsdFactor::with_shift(&kz, cfg.lambda)?,
        z,
        x_train: x.clone(),
        x_enc: x_enc.clone(),
        spec_enc: *spec_enc,
        spec_dec: *spec_dec,
        lambda: cfg.lambda,
        jitter_scale: cfg.jitter_scale,
        denoising: x_noisy.is_some(),
        trace,
    })
}

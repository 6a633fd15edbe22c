//! Computable complexity quantities for the generalization bounds, and fitted RKHS norms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datasets::TripletSet;
use crate::error::Result;
use crate::kernels::{gram_diag, relu_ntk, KernelFamily, KernelSpec};
use crate::model::Representation;
use crate::simple_contrastive::assemble_k1_k2;

/// Fitted `‖W‖²`; the auto-encoder reports encoder and decoder separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WNorm {
    Single(f64),
    Pair(f64, f64),
}

impl WNorm {
    /// Combined value written to the result table.
    pub fn total(&self) -> f64 {
        match *self {
            Self::Single(v) => v,
            Self::Pair(a, b) => a + b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub kappa: f64,
    pub gamma: Option<f64>,
    /// `λ(ω₁² + ω₂²)`, auto-encoder only.
    pub r: Option<f64>,
    /// Fitted norm, used as the empirical stand-in for the norm budget ω.
    pub w_norm_sq: Option<WNorm>,
    pub n: usize,
}

fn trace_term(spec: &KernelSpec, x: &DMatrix<f64>, h: usize) -> Result<(f64, f64)> {
    let d = gram_diag(spec, x)?;
    let max = d.iter().copied().fold(0.0_f64, f64::max);
    Ok(((h as f64 * d.iter().sum::<f64>()).sqrt(), max))
}

/// `(α, κ)` over anchors, negatives and positives.
pub fn complexity_terms(triplets: &TripletSet, spec: &KernelSpec, h: usize) -> Result<(f64, f64)> {
    let mut alpha = 0.0;
    let mut kappa = 0.0_f64;
    for x in [&triplets.anchors, &triplets.negatives, &triplets.positives] {
        let (a, k) = trace_term(spec, x, h)?;
        alpha += a;
        kappa = kappa.max(k);
    }
    Ok((alpha, kappa))
}

/// Single-set analogue `(√(h·Tr K_X), max k(x,x))` for methods trained without triplets.
pub fn complexity_terms_dataset(x: &DMatrix<f64>, spec: &KernelSpec, h: usize) -> Result<(f64, f64)> {
    trace_term(spec, x, h)
}

/// `max k(s, s)` over the unit sphere.
pub fn gamma_of(spec_dec: &KernelSpec) -> f64 {
    match spec_dec.family {
        KernelFamily::Gaussian | KernelFamily::Laplacian | KernelFamily::Linear => 1.0,
        KernelFamily::ReluNtk => relu_ntk(1.0, spec_dec.depth),
    }
}

/// Fitted `‖W‖²`; `None` for the raw baseline.
pub fn model_norms(rep: &Representation) -> Result<Option<WNorm>> {
    Ok(match rep {
        Representation::Raw => None,
        Representation::Kpca(m) => Some(WNorm::Single(m.norm_sq()?)),
        Representation::Simple(m) => {
            let (k1, _) = assemble_k1_k2(&m.triplets, &m.spec)?;
            Some(WNorm::Single((m.a.transpose() * k1 * &m.a).trace()))
        }
        Representation::Spectral(m) => Some(WNorm::Single(m.norm_sq())),
        Representation::Ae(m) => {
            let (a, b) = m.norms()?;
            Some(WNorm::Pair(a, b))
        }
    })
}

/// Assembles the report for a fitted representation; `triplets` is given for contrastive methods.
pub fn bound_report(rep: &Representation, triplets: Option<&TripletSet>, x_train: &DMatrix<f64>, h: usize) -> Result<Option<BoundReport>> {
    let spec = match rep {
        Representation::Raw => return Ok(None),
        Representation::Kpca(m) => m.spec,
        Representation::Simple(m) => m.spec,
        Representation::Spectral(m) => m.spec,
        Representation::Ae(m) => m.spec_enc,
    };
    let (alpha, kappa, n) = match triplets {
        Some(t) => {
            let (a, k) = complexity_terms(t, &spec, h)?;
            (a, k, t.len())
        }
        None => {
            let (a, k) = complexity_terms_dataset(x_train, &spec, h)?;
            (a, k, x_train.ncols())
        }
    };
    let w = model_norms(rep)?;
    let (gamma, r) = match (rep, w) {
        (Representation::Ae(m), Some(WNorm::Pair(a, b))) => (Some(gamma_of(&m.spec_dec)), Some(m.lambda * (a + b))),
        _ => (None, None),
    };
    Ok(Some(BoundReport { alpha, kappa, gamma, r, w_norm_sq: w, n }))
}

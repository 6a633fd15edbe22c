//! Scalar kernels and Gram-matrix assembly.
//!
//! Data matrices are `d × n` with one sample per column. Four families are
//! supported: Gaussian (RBF) `exp(-γ‖x−y‖²)`, Laplacian `exp(-γ‖x−y‖₁)`,
//! linear `xᵀy`, and the `L`-layer ReLU neural tangent kernel built from the
//! arc-cosine functions κ₀ and κ₁.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
    Linear,
    ReluNtk,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Gaussian,
        KernelFamily::Laplacian,
        KernelFamily::Linear,
        KernelFamily::ReluNtk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
            KernelFamily::Linear => "linear",
            KernelFamily::ReluNtk => "relu_ntk",
        }
    }

    /// Whether the family carries a bandwidth.
    pub fn has_bandwidth(self) -> bool {
        matches!(self, KernelFamily::Gaussian | KernelFamily::Laplacian)
    }

    pub fn parse(s: &str) -> Option<Self> {
        KernelFamily::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kernel family plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Bandwidth; used by the Gaussian and Laplacian families.
    pub gamma: f64,
    /// Number of layers; used by the ReLU-NTK family.
    pub depth: u32,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        Self { family: KernelFamily::Gaussian, gamma, depth: 1 }
    }

    pub fn laplacian(gamma: f64) -> Self {
        Self { family: KernelFamily::Laplacian, gamma, depth: 1 }
    }

    pub fn linear() -> Self {
        Self { family: KernelFamily::Linear, gamma: 1.0, depth: 1 }
    }

    pub fn relu_ntk(depth: u32) -> Self {
        Self { family: KernelFamily::ReluNtk, gamma: 1.0, depth }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::Laplacian => {
                if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                    return input(format!("{} kernel needs gamma > 0, got {}", self.family, self.gamma));
                }
            }
            KernelFamily::ReluNtk => {
                if self.depth < 1 {
                    return input("relu_ntk kernel needs depth >= 1");
                }
            }
            KernelFamily::Linear => {}
        }
        Ok(())
    }

    /// Evaluates the kernel on two points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != y.len() {
            return input(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
        }
        if x.is_empty() {
            return input("points must have dimension >= 1");
        }
        if self.family == KernelFamily::ReluNtk {
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                return Err(Error::Domain("relu_ntk kernel is undefined at the zero vector".into()));
            }
            return Ok(relu_ntk(dot(x, y) / (nx * ny), self.depth));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel value without validation. For ReLU-NTK, prefer the Gram
    /// routines, which reuse precomputed norms.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelFamily::Laplacian => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-self.gamma * d1).exp()
            }
            KernelFamily::Linear => dot(x, y),
            KernelFamily::ReluNtk => relu_ntk(dot(x, y) / (norm(x) * norm(y)), self.depth),
        }
    }

    /// `k(x, x)`.
    pub fn diag_value(&self, x: &[f64]) -> Result<f64> {
        self.eval(x, x)
    }

    /// Gradient of `k(a, b)` with respect to its first argument.
    ///
    /// The Laplacian uses the sign subgradient with 0 at coordinate ties.
    /// The ReLU-NTK derivative is not provided.
    pub fn grad_first(&self, a: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        match self.family {
            KernelFamily::Gaussian => {
                let k = self.eval_unchecked(a, b);
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o = -2.0 * self.gamma * (x - y) * k;
                }
            }
            KernelFamily::Laplacian => {
                let k = self.eval_unchecked(a, b);
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    let s = if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    };
                    *o = -self.gamma * s * k;
                }
            }
            KernelFamily::Linear => out.copy_from_slice(b),
            KernelFamily::ReluNtk => {
                return Err(Error::Unsupported("relu_ntk kernel derivative is not available".into()))
            }
        }
        Ok(())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::Laplacian => write!(f, "{}(gamma={})", self.family, self.gamma),
            KernelFamily::Linear => write!(f, "linear"),
            KernelFamily::ReluNtk => write!(f, "relu_ntk(depth={})", self.depth),
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn arccos(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else if u <= -1.0 {
        PI
    } else {
        u.acos()
    }
}

/// κ₀(u) = (π − arccos u)/π
pub fn kappa0(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    (PI - arccos(u)) / PI
}

/// κ₁(u) = (u(π − arccos u) + √(1 − u²))/π
pub fn kappa1(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    (u * (PI - arccos(u)) + (1.0 - u * u).max(0.0).sqrt()) / PI
}

/// The ReLU-NTK recursion evaluated at a cosine similarity `u`.
pub fn relu_ntk(u: f64, depth: u32) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    let mut kappa = u;
    let mut ntk = u;
    for _ in 2..=depth {
        let next = kappa1(kappa);
        ntk = ntk * kappa0(kappa) + next;
        kappa = next;
    }
    ntk
}

pub(crate) fn col(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let d = x.nrows();
    &x.as_slice()[j * d..(j + 1) * d]
}

fn check_points(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return input("points must have dimension >= 1");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("points contain non-finite values");
    }
    if spec.family == KernelFamily::ReluNtk {
        if let Some(j) = (0..x.ncols()).find(|&j| norm(col(x, j)) == 0.0) {
            return Err(Error::Domain(format!("relu_ntk kernel is undefined at the zero vector (column {j})")));
        }
    }
    Ok(())
}

/// Rescales columns to unit norm; used so that the ReLU-NTK only sees sphere points.
fn unit_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    out
}

/// Cross-Gram matrix `K[i][j] = k(X[:,i], Y[:,j])` (`n × m`).
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gram_with(Execution::default(), spec, x, y)
}

pub fn gram_with(exec: Execution, spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if std::ptr::eq(x, y) {
        return gram_self_with(exec, spec, x);
    }
    spec.validate()?;
    if x.nrows() != y.nrows() {
        return input(format!("dimension mismatch: {} vs {}", x.nrows(), y.nrows()));
    }
    check_points(spec, x)?;
    check_points(spec, y)?;
    let (n, m) = (x.ncols(), y.ncols());
    let (xs, ys);
    let (x, y) = if spec.family == KernelFamily::ReluNtk {
        xs = unit_columns(x);
        ys = unit_columns(y);
        (&xs, &ys)
    } else {
        (x, y)
    };
    // Column j of the output holds k(X[:,i], Y[:,j]) for all i.
    let cols = par::map_range(exec, m, |j| {
        let yj = col(y, j);
        (0..n).map(|i| entry(spec, col(x, i), yj)).collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_iterator(n, m, cols.into_iter().flatten()))
}

/// Gram matrix of a point set with itself; exactly symmetric.
pub fn gram_self(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gram_self_with(Execution::default(), spec, x)
}

pub fn gram_self_with(exec: Execution, spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_points(spec, x)?;
    let n = x.ncols();
    let xs;
    let x = if spec.family == KernelFamily::ReluNtk {
        xs = unit_columns(x);
        &xs
    } else {
        x
    };
    let upper = par::map_range(exec, n, |j| {
        let xj = col(x, j);
        (0..=j).map(|i| entry(spec, col(x, i), xj)).collect::<Vec<f64>>()
    });
    let mut k = DMatrix::zeros(n, n);
    for (j, c) in upper.into_iter().enumerate() {
        for (i, v) in c.into_iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `k(X[:,i], x*)` for every column `i`.
pub fn kernel_vector(spec: &KernelSpec, x: &DMatrix<f64>, point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != x.nrows() {
        return input(format!("dimension mismatch: {} vs {}", point.len(), x.nrows()));
    }
    let p = DMatrix::from_column_slice(point.len(), 1, point);
    Ok(gram_with(Execution::Sequential, spec, x, &p)?.as_slice().to_vec())
}

/// Diagonal `k(x_i, x_i)`.
pub fn gram_diag(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    spec.validate()?;
    check_points(spec, x)?;
    Ok((0..x.ncols()).map(|j| spec.eval_unchecked(col(x, j), col(x, j))).collect())
}

// ReLU-NTK inputs are already unit-norm here.
fn entry(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::ReluNtk => relu_ntk(dot(a, b), spec.depth),
        _ => spec.eval_unchecked(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn gaussian_self_similarity_is_one() {
        let k = KernelSpec::gaussian(3.7);
        assert_eq!(k.eval(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn linear_is_dot_product() {
        assert_eq!(KernelSpec::linear().eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn relu_ntk_two_layers_at_parallel_inputs() {
        // κ²(1) = κ₁(1) = 1 and κ_NTK²(1) = 1·κ₀(1) + 1 = 2.
        let k = KernelSpec::relu_ntk(2);
        assert_abs_diff_eq!(k.eval(&[0.6, 0.8], &[3.0, 4.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(relu_ntk(1.0, 2), 2.0);
    }

    #[test]
    fn relu_ntk_single_layer_is_cosine() {
        let k = KernelSpec::relu_ntk(1);
        let v = k.eval(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn relu_ntk_antiparallel_is_finite() {
        let v = KernelSpec::relu_ntk(3).eval(&[1.0, 0.0], &[-2.0, 0.0]).unwrap();
        assert!(v.is_finite());
        // κ₀(-1) = 0 and κ₁(-1) = 0, so depth 2: -1·0 + 0 = 0; depth 3: 0·κ₀(0) + κ₁(0) = 1/π.
        assert_abs_diff_eq!(v, 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn laplacian_unit_offset() {
        let v = KernelSpec::laplacian(1.0).eval(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, 0.367_879_441_171_442_3, epsilon = 1e-15);
    }

    #[test]
    fn eval_errors() {
        assert!(matches!(KernelSpec::linear().eval(&[1.0], &[1.0, 2.0]), Err(Error::Input(_))));
        assert!(matches!(KernelSpec::relu_ntk(2).eval(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::relu_ntk(0).validate().is_err());
    }

    #[test]
    fn gram_of_identity_under_linear_kernel() {
        let x = DMatrix::<f64>::identity(2, 2);
        let k = gram(&KernelSpec::linear(), &x, &x).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_one_dimensional_gaussian() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let k = gram_self(&KernelSpec::gaussian(1.0), &x).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));
    }

    #[test]
    fn duplicated_column_gives_identical_rows() {
        let x = DMatrix::from_column_slice(2, 3, &[0.1, 0.2, 1.0, -1.0, 0.1, 0.2]);
        let k = gram_self(&KernelSpec::gaussian(0.5), &x).unwrap();
        assert_eq!(k.row(0), k.row(2));
    }

    #[test]
    fn cross_gram_matches_pointwise_eval() {
        let x = DMatrix::from_column_slice(2, 3, &[0.1, 0.2, 1.0, -1.0, 0.5, 0.7]);
        let y = DMatrix::from_column_slice(2, 2, &[0.3, -0.4, 2.0, 1.0]);
        for spec in [KernelSpec::gaussian(0.7), KernelSpec::laplacian(0.2), KernelSpec::linear(), KernelSpec::relu_ntk(3)] {
            let k = gram(&spec, &x, &y).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    let v = spec.eval(col(&x, i), col(&y, j)).unwrap();
                    assert_relative_eq!(k[(i, j)], v, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_gram_agree() {
        let x = DMatrix::from_fn(3, 40, |i, j| ((i * 7 + j * 13) % 11) as f64 / 5.0 - 1.0);
        let spec = KernelSpec::gaussian(0.3);
        let a = gram_self_with(Execution::Sequential, &spec, &x).unwrap();
        let b = gram_self_with(Execution::Parallel, &spec, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let a = [0.3, -0.2, 0.5];
        let b = [-0.1, 0.4, 0.2];
        for spec in [KernelSpec::gaussian(0.8), KernelSpec::laplacian(0.6), KernelSpec::linear()] {
            let mut g = [0.0; 3];
            spec.grad_first(&a, &b, &mut g).unwrap();
            for t in 0..3 {
                let eps = 1e-6;
                let mut ap = a;
                let mut am = a;
                ap[t] += eps;
                am[t] -= eps;
                let fd = (spec.eval(&ap, &b).unwrap() - spec.eval(&am, &b).unwrap()) / (2.0 * eps);
                assert_abs_diff_eq!(g[t], fd, epsilon = 1e-8);
            }
        }
        let mut g = [0.0; 3];
        assert!(matches!(KernelSpec::relu_ntk(2).grad_first(&a, &b, &mut g), Err(Error::Unsupported(_))));
    }
}

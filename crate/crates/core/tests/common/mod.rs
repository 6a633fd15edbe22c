//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use kernrep::datasets::TripletSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn unit_columns(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = gaussian(r, c, rng);
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    m
}

/// Triplets with independently drawn negatives, so all `3n` points are distinct.
pub fn distinct_triplets(d: usize, n: usize, rng: &mut ChaCha8Rng) -> TripletSet {
    let anchors = uniform(d, n, rng);
    let positives = &anchors + gaussian(d, n, rng) * 0.1;
    let negatives = uniform(d, n, rng);
    TripletSet::new(anchors, positives, negatives).unwrap()
}

/// Central finite-difference gradient of `f` at `z`.
pub fn fd_gradient(z: &DMatrix<f64>, eps: f64, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        for j in 0..z.ncols() {
            let mut plus = z.clone();
            plus[(i, j)] += eps;
            let mut minus = z.clone();
            minus[(i, j)] -= eps;
            g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
    }
    g
}

pub fn relative_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm().max(1e-12)
}

/// Explicit feature-space matrix `M = −½(ΔΦᵀ + ΦΔᵀ)` of the simple contrastive
/// objective under the identity feature map; the objective is `Tr(WᵀMW)` over
/// orthonormal `W`.
pub fn linear_contrastive_matrix(t: &TripletSet) -> DMatrix<f64> {
    let phi = &t.anchors;
    let delta = &t.negatives - &t.positives;
    let a = &delta * phi.transpose();
    (&a + a.transpose()) * -0.5
}

/// Brute-force optimum of `max Tr(WᵀMW)` over `d × h` orthonormal `W`.
pub fn linear_contrastive_optimum(t: &TripletSet, h: usize) -> f64 {
    let mut ev: Vec<f64> = SymmetricEigen::new(linear_contrastive_matrix(t)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[..h].iter().sum()
}

/// Random `d × h` matrix with orthonormal columns (Gram–Schmidt via QR).
pub fn random_orthonormal(d: usize, h: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(d, h, rng).qr().q().columns(0, h).into_owned()
}

/// Classical PCA scores (`h × n`) of the columns of `x` via the covariance eigensolve.
pub fn classical_pca_scores(x: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let n = x.ncols();
    let mean = x.column_mean();
    let mut xc = x.clone();
    for j in 0..n {
        let mut c = xc.column_mut(j);
        c -= &mean;
    }
    let cov = &xc * xc.transpose();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut scores = DMatrix::zeros(h, n);
    for (r, &k) in order[..h].iter().enumerate() {
        scores.set_row(r, &(eig.eigenvectors.column(k).transpose() * &xc));
    }
    scores
}

/// Max-abs difference after aligning each row of `a` to `b` by sign.
pub fn max_diff_up_to_row_sign(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..a.nrows() {
        let same = (a.row(r) - b.row(r)).amax();
        let flipped = (a.row(r) + b.row(r)).amax();
        worst = worst.max(same.min(flipped));
    }
    worst
}

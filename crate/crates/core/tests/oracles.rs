//! Numerical results checked against independent reference computations,
//! plus property-based invariants.

mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

use kernrep::datasets::{make_circles, make_triplets, split, Dataset, TripletSet};
use kernrep::diagnostics::complexity_terms;
use kernrep::downstream::{accuracy, KnnClassifier};
use kernrep::kernel_ae::{ae_reconstruction, fit_ae, AeConfig, AeObjective};
use kernrep::kernels::{gram_self, KernelSpec};
use kernrep::kpca::fit_kpca;
use kernrep::linalg::sym_eig;
use kernrep::simple_contrastive::{assemble_k1_k2, coefficient_objective, fit_simple};
use kernrep::spectral_contrastive::{fit_spectral, SpectralConfig, SpectralObjective};

fn random_psd(m: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
    let b = uniform(m, m, rng);
    &b * b.transpose() + DMatrix::identity(m, m) * 0.5
}

#[test]
fn spectral_gradient_matches_finite_differences() {
    let mut r = rng(100);
    for case in 0..24 {
        let h = 1 + case % 3;
        let n = 1 + case % 5;
        let k = random_psd(3 * n, &mut r);
        let lambda = r.random_range(0.0..2.0);
        let z = uniform(h, 3 * n, &mut r);
        let obj = SpectralObjective::new(&k, lambda, 1e-10).unwrap();
        let fd = fd_gradient(&z, 1e-5, |z| obj.loss(z).unwrap());
        let err = relative_error(&obj.grad(&z).unwrap(), &fd);
        assert!(err <= 1e-5, "case {case}: relative error {err}");
    }
}

#[test]
fn ae_gradient_matches_finite_differences() {
    let mut r = rng(200);
    for case in 0..24 {
        let h = 1 + case % 3;
        let n = 2 + case % 9;
        let x = uniform(3, n, &mut r);
        let z = unit_columns(h, n, &mut r);
        let enc = KernelSpec::gaussian(r.random_range(0.3..2.0));
        let dec = if case % 2 == 0 { KernelSpec::gaussian(r.random_range(0.3..2.0)) } else { KernelSpec::linear() };
        let lambda = r.random_range(0.05..1.0);
        let obj = AeObjective::new(&x, &x, &enc, &dec, lambda, 1e-8).unwrap();
        let fd = fd_gradient(&z, 1e-5, |z| obj.objective(z).unwrap());
        let err = relative_error(&obj.grad(&z).unwrap(), &fd);
        assert!(err <= 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn encoder_trace_gradient_is_weighted_by_inverse_gram() {
    // with a linear decoder the encoder term alone has gradient 2λ Z K_X⁻¹
    let mut r = rng(201);
    let x = uniform(3, 6, &mut r);
    let z = unit_columns(2, 6, &mut r);
    let enc = KernelSpec::gaussian(0.8);
    let kx = gram_self(&enc, &x).unwrap();
    let lambda = 0.3;
    let f = |z: &DMatrix<f64>| lambda * (z * kx.clone().try_inverse().unwrap() * z.transpose()).trace();
    let analytic = &z * kx.clone().try_inverse().unwrap() * (2.0 * lambda);
    assert!(relative_error(&analytic, &fd_gradient(&z, 1e-5, f)) < 1e-6);
}

#[test]
fn simple_contrastive_matches_explicit_feature_optimum() {
    let mut r = rng(300);
    for case in 0..20 {
        let d = 1 + case % 3;
        let n = 3 + case % 8;
        let h = 1 + case % 2;
        if h > d {
            continue;
        }
        let t = distinct_triplets(d, n, &mut r);
        let model = fit_simple(&t, &KernelSpec::linear(), h, 1e-10).unwrap();
        let oracle = linear_contrastive_optimum(&t, h);
        assert!((-model.objective() - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()), "case {case}: {} vs {oracle}", -model.objective());
    }
}

#[test]
fn simple_contrastive_beats_random_orthonormal_candidates() {
    let mut r = rng(301);
    for _ in 0..3 {
        let t = distinct_triplets(3, 8, &mut r);
        let model = fit_simple(&t, &KernelSpec::linear(), 2, 1e-10).unwrap();
        let m = linear_contrastive_matrix(&t);
        for _ in 0..1000 {
            let w = random_orthonormal(3, 2, &mut r);
            let value = (w.transpose() * &m * &w).trace();
            assert!(-model.objective() >= value - 1e-9);
        }
    }
}

#[test]
fn simple_contrastive_explicit_weights_reproduce_embeddings() {
    let mut r = rng(302);
    let t = distinct_triplets(3, 7, &mut r);
    let model = fit_simple(&t, &KernelSpec::linear(), 2, 1e-10).unwrap();
    let mut basis = DMatrix::zeros(3, 14);
    basis.columns_mut(0, 7).copy_from(&t.anchors);
    basis.columns_mut(7, 7).copy_from(&(&t.negatives - &t.positives));
    let w = basis * &model.a;
    assert!((w.transpose() * &w - DMatrix::identity(2, 2)).amax() < 1e-6);
    let queries = uniform(3, 5, &mut r);
    assert!((model.embed_batch(&queries).unwrap() - w.transpose() * &queries).amax() < 1e-8);
}

#[test]
fn spectral_linear_kernel_matches_explicit_weights() {
    let mut r = rng(400);
    for _ in 0..5 {
        let t = distinct_triplets(6, 2, &mut r); // 6 points in 6-d keep K invertible
        let mut cfg = SpectralConfig { h: 2, lambda: 0.5, jitter_scale: 1e-12, ..SpectralConfig::default() };
        cfg.descent.max_iters = 50;
        let model = fit_spectral(&t, &KernelSpec::linear(), &cfg, 1).unwrap();
        let p = &model.points;
        let k = p.transpose() * p;
        let w = p * k.try_inverse().unwrap() * model.z.transpose();
        let queries = uniform(6, 6, &mut r);
        assert!((model.embed_batch(&queries).unwrap() - w.transpose() * &queries).amax() < 1e-6);
        assert!((model.norm_sq() - w.norm_squared()).abs() < 1e-6 * (1.0 + w.norm_squared()));
    }
}

#[test]
fn spectral_linear_embedding_is_additive() {
    let mut r = rng(401);
    let t = distinct_triplets(2, 4, &mut r);
    let mut cfg = SpectralConfig { h: 1, ..SpectralConfig::default() };
    cfg.descent.max_iters = 30;
    let model = fit_spectral(&t, &KernelSpec::linear(), &cfg, 2).unwrap();
    for _ in 0..10 {
        let a = uniform(2, 1, &mut r);
        let b = uniform(2, 1, &mut r);
        let sum = model.embed_batch(&(&a + &b)).unwrap();
        let parts = model.embed_batch(&a).unwrap() + model.embed_batch(&b).unwrap();
        assert!((sum - parts).amax() < 1e-8);
    }
}

#[test]
fn decoder_trace_identity() {
    let mut r = rng(500);
    for _ in 0..5 {
        let x = uniform(3, 8, &mut r);
        let z = unit_columns(2, 8, &mut r);
        let dec = KernelSpec::gaussian(3.0);
        let lambda = 0.2;
        let q = ae_reconstruction(&z, &x, &dec, lambda).unwrap();
        let kz = gram_self(&dec, &z).unwrap() + DMatrix::identity(8, 8) * 1e-10;
        let direct = (&q * kz.try_inverse().unwrap() * q.transpose()).trace();
        let obj = AeObjective::new(&x, &x, &KernelSpec::gaussian(1.0), &dec, lambda, 1e-10).unwrap();
        let terms = obj.terms(&z).unwrap();
        assert!((terms.decoder_norm - direct).abs() <= 1e-5 * direct.abs());
    }
}

#[test]
fn linear_kpca_equals_classical_pca() {
    let mut r = rng(600);
    for n in [5, 12, 20] {
        let x = gaussian(3, n, &mut r);
        let model = fit_kpca(&x, &KernelSpec::linear(), 2).unwrap();
        let scores = model.training_embedding().unwrap();
        assert!(max_diff_up_to_row_sign(&scores, &classical_pca_scores(&x, 2)) < 1e-6);
    }
}

#[test]
fn linear_kpca_projects_new_points_like_pca() {
    let mut r = rng(601);
    let x = gaussian(3, 15, &mut r);
    let model = fit_kpca(&x, &KernelSpec::linear(), 2).unwrap();
    let train = model.training_embedding().unwrap();
    let pca = classical_pca_scores(&x, 2);
    let signs: Vec<f64> = (0..2).map(|i| if (train.row(i) - pca.row(i)).amax() < 1e-6 { 1.0 } else { -1.0 }).collect();
    let q = gaussian(3, 4, &mut r);
    let mean = x.column_mean();
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        c -= &mean;
    }
    let eig = nalgebra::SymmetricEigen::new(&xc * xc.transpose());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let emb = model.embed_batch(&q).unwrap();
    for i in 0..2 {
        let u = eig.eigenvectors.column(order[i]);
        for j in 0..4 {
            let expected = u.dot(&(q.column(j) - &mean));
            let sign_u = if (u.transpose() * &xc - pca.row(i)).amax() < 1e-9 { 1.0 } else { -1.0 };
            assert!((emb[(i, j)] - signs[i] * sign_u * expected).abs() < 1e-6);
        }
    }
}

#[test]
fn kpca_training_embeddings_are_uncorrelated() {
    let ds = make_circles(40, 0.6, 0.05, 4).unwrap();
    let model = fit_kpca(&ds.x, &KernelSpec::gaussian(1.0), 3).unwrap();
    let e = model.training_embedding().unwrap();
    let cov = &e * e.transpose();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(cov[(i, j)].abs() < 1e-6);
            }
        }
    }
}

fn all_specs() -> [KernelSpec; 4] {
    [KernelSpec::gaussian(0.7), KernelSpec::laplacian(0.4), KernelSpec::linear(), KernelSpec::relu_ntk(2)]
}

fn matrix(d: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0..3.0f64, d * n).prop_map(move |v| DMatrix::from_vec(d, n, v))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gram_matrices_are_symmetric_psd(x in matrix(3, 9)) {
        for spec in all_specs() {
            let k = gram_self(&spec, &x).unwrap();
            prop_assert_eq!(&k, &k.transpose());
            let eig = sym_eig(&k).unwrap();
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-9 * (1.0 + k.trace()));
        }
    }

    #[test]
    fn simple_fit_is_orthonormal(x in matrix(2, 10), seed in 0u64..1000) {
        let t = make_triplets(&x, 0.2, seed).unwrap();
        for spec in all_specs() {
            // degenerate draws (e.g. all points equal) may lack rank 2
            let Ok(m) = fit_simple(&t, &spec, 2, 1e-10) else { continue };
            let (k1, k2) = assemble_k1_k2(&t, &spec).unwrap();
            let gram = m.a.transpose() * &k1 * &m.a;
            prop_assert!((gram - DMatrix::identity(2, 2)).amax() <= 1e-6);
            prop_assert!((coefficient_objective(&m.a, &k2) + m.objective()).abs() <= 1e-6 * (1.0 + m.objective().abs()));
        }
    }

    #[test]
    fn stationary_kernels_are_translation_invariant(x in matrix(2, 6), shift in proptest::collection::vec(-5.0..5.0f64, 2)) {
        let t = make_triplets(&x, 0.1, 3).unwrap();
        let s = nalgebra::DVector::from_vec(shift);
        let moved = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for mut c in out.column_iter_mut() {
                c += &s;
            }
            out
        };
        let t2 = TripletSet::new(moved(&t.anchors), moved(&t.positives), moved(&t.negatives)).unwrap();
        for spec in [KernelSpec::gaussian(0.5), KernelSpec::laplacian(0.5)] {
            let (a1, a2) = assemble_k1_k2(&t, &spec).unwrap();
            let (b1, b2) = assemble_k1_k2(&t2, &spec).unwrap();
            prop_assert!((a1 - b1).amax() < 1e-10);
            prop_assert!((a2 - b2).amax() < 1e-10);
        }
    }

    #[test]
    fn alpha_scales_with_root_h(x in matrix(2, 5), h in 1usize..4) {
        let t = make_triplets(&x, 0.1, 1).unwrap();
        for spec in all_specs() {
            let (a1, _) = complexity_terms(&t, &spec, h).unwrap();
            let (a2, _) = complexity_terms(&t, &spec, 2 * h).unwrap();
            prop_assert!((a2 - 2f64.sqrt() * a1).abs() <= 1e-12 * (1.0 + a1));
            prop_assert!(a1 >= 0.0);
        }
    }

    #[test]
    fn knn_ignores_storage_order(pts in matrix(2, 7), labels in proptest::collection::vec(0usize..3, 7), q in matrix(2, 1), seed in 0u64..100) {
        let dists: Vec<f64> = (0..7).map(|j| (pts.column(j) - q.column(0)).norm()).collect();
        let mut sorted = dists.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let mut order: Vec<usize> = (0..7).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng(seed));
        let shuffled = kernrep::datasets::select_columns(&pts, &order);
        let shuffled_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = KnnClassifier::new(pts.clone(), labels.clone(), 3).unwrap().predict(q.as_slice()).unwrap();
        let b = KnnClassifier::new(shuffled, shuffled_labels, 3).unwrap().predict(q.as_slice()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn accuracy_survives_relabeling(pred in proptest::collection::vec(0usize..4, 1..30), offset in 1usize..4) {
        let truth: Vec<usize> = pred.iter().enumerate().map(|(i, &p)| if i % 3 == 0 { (p + 1) % 4 } else { p }).collect();
        let relabel = |v: &[usize]| v.iter().map(|&l| (l + offset) % 4).collect::<Vec<_>>();
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&relabel(&pred), &relabel(&truth)).unwrap());
    }

    #[test]
    fn splits_partition_and_cover_classes(n in 40usize..120, seed in 0u64..500) {
        let n = n - n % 2;
        let ds = make_circles(n, 0.6, 0.05, seed).unwrap();
        let s = split(&ds, (0.5, 0.05, 0.45), seed).unwrap();
        let mut all: Vec<usize> = s.unlabeled.iter().chain(&s.labeled).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let y = ds.labels().unwrap();
        for c in 0..2 {
            prop_assert!(s.labeled.iter().any(|&i| y[i] == c));
        }
    }

    #[test]
    fn ae_keeps_unit_columns(x in matrix(3, 8), seed in 0u64..100) {
        let mut cfg = AeConfig::default();
        cfg.descent.max_iters = 15;
        let spec = KernelSpec::gaussian(0.5);
        let m = fit_ae(&x, None, &spec, &spec, &cfg, seed).unwrap();
        for c in m.z.column_iter() {
            prop_assert!((c.norm_squared() - 1.0).abs() < 1e-8);
        }
        prop_assert!(m.trace.best_value <= m.trace.values[0]);
    }
}

#[test]
fn labeled_dataset_constructor_validates() {
    assert!(Dataset::new("bad", DMatrix::zeros(2, 3), Some(vec![0, 1])).is_err());
}

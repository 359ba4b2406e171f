use proptest::prelude::*;

use simec_core::fixtures;
use simec_core::linalg::{sym_eigen, Matrix, Vector};
use simec_core::metric::{
    analyze_point, analyze_point_with, pullback, step_increments, suggest_tau, NullThreshold,
    OutputMetric, PullbackMetric,
};
use simec_core::network::{Activation, Dense, Layer, NetworkSpec};
use simec_core::walk::WalkRng;

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = WalkRng::new(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn weights(m: usize, seed: u64) -> Vector {
    let mut rng = WalkRng::new(seed);
    Vector::from((0..m).map(|_| 0.05 + 3.0 * rng.uniform()).collect::<Vec<_>>())
}

/// `Σ_{h,k} g_hk J_hi J_kj` with the full double sum over output indices.
fn defining_sum(j: &Matrix, g: &[f64]) -> Matrix {
    let (m, n) = j.shape();
    let mut h = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for p in 0..m {
                for q in 0..m {
                    let gpq = if p == q { g[p] } else { 0.0 };
                    s += gpq * j[(p, a)] * j[(q, b)];
                }
            }
            h[(a, b)] = s;
        }
    }
    h
}

#[test]
fn identity_jacobian_pulls_back_identity() {
    let h = pullback(&Matrix::identity(4), &OutputMetric::Identity).unwrap();
    assert_eq!(h, Matrix::identity(4));
    let pm = analyze_point(&fixtures::identity(3), &[0.1, 0.2, 0.3], &OutputMetric::Identity, 1e-8).unwrap();
    assert_eq!(pm.kernel_dim(), 0);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let g = OutputMetric::diagonal(Vector::from([1.0, 2.0, 3.0])).unwrap();
    assert!(pullback(&Matrix::identity(2), &g).is_err());
}

#[test]
fn relative_threshold_scales_with_the_spectrum() {
    let h = Matrix::diagonal(&[1e6, 1e-3, 0.0]);
    let abs = PullbackMetric::from_matrix(Vector::zeros(3), h.clone(), NullThreshold::Absolute(1e-8)).unwrap();
    let rel = PullbackMetric::from_matrix(Vector::zeros(3), h, NullThreshold::Relative(1e-8)).unwrap();
    assert_eq!(abs.kernel_dim(), 1);
    assert_eq!(rel.kernel_dim(), 2);
}

#[test]
fn negative_eigenvalues_beyond_slack_are_rejected() {
    let h = Matrix::diagonal(&[1.0, -1e-6]);
    assert!(PullbackMetric::from_matrix(Vector::zeros(2), h, NullThreshold::Absolute(1e-8)).is_err());
    let h = Matrix::diagonal(&[1.0, -1e-13]);
    let pm = PullbackMetric::from_matrix(Vector::zeros(2), h, NullThreshold::Absolute(1e-8)).unwrap();
    assert_eq!(pm.eigen.eigenvalues, vec![0.0, 1.0]);
}

#[test]
fn wide_and_square_routes_agree_on_the_spectrum() {
    // A 3-output net on 6 inputs goes through the factored route; its
    // spectrum must match Jacobi on the explicit metric.
    let net = fixtures::random_mlp(7, &[6, 5, 3], Activation::Tanh);
    let x = [0.3, -0.1, 0.2, 0.5, -0.7, 0.05];
    let pm = analyze_point(&net, &x, &OutputMetric::Identity, 1e-8).unwrap();
    let direct = sym_eigen(&pm.h).unwrap();
    for (a, b) in pm.eigen.eigenvalues.iter().zip(&direct.eigenvalues) {
        assert!((a - b).abs() < 1e-12 * pm.h.max_abs().max(1.0), "{a} vs {b}");
    }
    assert_eq!(pm.kernel_dim(), 3);
    for &i in &pm.null_indices {
        let v = pm.eigen.eigenvector(i);
        let hv = pm.h.mul_vec(&v).unwrap();
        assert!(hv.norm() < 1e-12);
    }
}

#[test]
fn two_layer_linear_tau() {
    let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
    let b = Matrix::from_rows(&[[3.0, 0.0]]);
    let net = NetworkSpec::new(vec![
        Layer::Dense(Dense::linear(a.clone(), Activation::Identity).unwrap()),
        Layer::Dense(Dense::linear(b.clone(), Activation::Identity).unwrap()),
    ])
    .unwrap();
    let tau = suggest_tau(&net, 1e-3).unwrap();
    let expected = 2.0 * a.frobenius_norm() * b.frobenius_norm() * 1e-3;
    assert!((tau - expected).abs() < 1e-15);
    assert!(suggest_tau(&fixtures::lstm_net(1, 1, 1), 1e-3).is_err());
}

#[test]
fn null_directions_cost_at_most_eps_energy() {
    let net = fixtures::random_mlp(3, &[5, 4, 2], Activation::Tanh);
    let x = [0.1, 0.2, -0.3, 0.4, 0.0];
    let eps = 1e-8;
    let pm = analyze_point(&net, &x, &OutputMetric::Identity, eps).unwrap();
    for &i in &pm.null_indices {
        let (de, dpl) = step_increments(&pm.h, &pm.eigen.eigenvector(i), 0.1);
        assert!(de <= eps * 0.01 && de >= 0.0 && dpl >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pullback_is_symmetric_psd_with_rank_of_j(
        m in 1usize..7, n in 1usize..7, r in 1usize..7, seed in any::<u64>(), diag in any::<bool>(),
    ) {
        let r = r.min(m).min(n);
        let j = matrix(m, r, seed).matmul(&matrix(r, n, seed ^ 0xabc)).unwrap();
        let g = if diag { OutputMetric::diagonal(weights(m, seed)).unwrap() } else { OutputMetric::Identity };
        let h = pullback(&j, &g).unwrap();
        prop_assert!(h.is_symmetric(1e-12));
        let e = sym_eigen(&h).unwrap();
        prop_assert!(e.eigenvalues[0] >= -1e-10);
        let scale = h.max_abs().max(1.0);
        let rank = e.eigenvalues.iter().filter(|&&l| l > 1e-9 * scale).count();
        prop_assert_eq!(rank, r);
    }

    #[test]
    fn pullback_equals_defining_sum(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let j = matrix(m, n, seed);
        let w = weights(m, seed ^ 7);
        let h = pullback(&j, &OutputMetric::diagonal(w.clone()).unwrap()).unwrap();
        prop_assert!(h.max_abs_diff(&defining_sum(&j, &w)).unwrap() < 1e-10);
    }

    #[test]
    fn scaling_the_output_metric_scales_the_spectrum(
        seed in any::<u64>(), c in 0.01f64..100.0,
    ) {
        let net = fixtures::random_mlp(seed, &[4, 6, 3], Activation::Sigmoid);
        let x: Vec<f64> = { let mut r = WalkRng::new(seed ^ 3); (0..4).map(|_| r.normal()).collect() };
        let g = OutputMetric::Identity;
        let eps = 1e-6;
        let base = analyze_point(&net, &x, &g, eps).unwrap();
        let scaled = analyze_point(&net, &x, &g.scaled(c, 3).unwrap(), eps * c).unwrap();
        for (a, b) in base.eigen.eigenvalues.iter().zip(&scaled.eigen.eigenvalues) {
            prop_assert!((a * c - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        prop_assert_eq!(base.null_indices, scaled.null_indices);
    }

    #[test]
    fn relu_metric_is_constant_on_a_region(seed in any::<u64>(), t in -1.0f64..1.0) {
        let net = fixtures::random_mlp(seed, &[3, 8, 2], Activation::Relu);
        let mut r = WalkRng::new(seed ^ 5);
        let x: Vec<f64> = (0..3).map(|_| r.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1e-3 * t).collect();
        let g = OutputMetric::Identity;
        let a = analyze_point_with(&net, &x, &g, NullThreshold::Absolute(1e-8)).unwrap();
        let b = analyze_point_with(&net, &y, &g, NullThreshold::Absolute(1e-8)).unwrap();
        if a.signature == b.signature {
            prop_assert!(a.metric.h.max_abs_diff(&b.metric.h).unwrap() <= 1e-12);
        }
    }
}

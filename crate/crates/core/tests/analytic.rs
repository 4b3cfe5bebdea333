use nalgebra::DMatrix;
use noloco_core::analytic::{
    eigen_d, expected_phi_sequence, matrix_b, matrix_d, predict, root_moduli, variance_sequence,
    AnalyticConfig,
};
use noloco_core::models::QuadraticProblem;
use noloco_core::numerics::{Matrix, RngStream, Vector};
use noloco_core::optimizers::default_gamma;
use proptest::prelude::*;

fn na_eigs(m: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn problem(d: usize, seed: u64) -> QuadraticProblem {
    QuadraticProblem::random(d, 0.1, 1.0, 1.0, &mut RngStream::new(seed, 0)).unwrap()
}

fn config(p: QuadraticProblem, omega: f64, m: usize, alpha: f64, beta: f64) -> AnalyticConfig {
    AnalyticConfig {
        problem: p,
        omega,
        m,
        alpha,
        beta,
        gamma: default_gamma(alpha, 2).unwrap(),
        n: 2,
        horizon: 600,
    }
}

#[test]
fn b_spectrum_matches_independent_solver() {
    let p = problem(6, 1);
    let omega = 0.3;
    let got = na_eigs(&matrix_b(&p, omega));
    let mut want: Vec<f64> = p.eigenvalues().iter().map(|l| 1.0 - omega * l).collect();
    want.sort_by(f64::total_cmp);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn scalar_eigenvalues_match_assembled_d() {
    for seed in 0..5 {
        let p = problem(5, seed);
        let got = na_eigs(&matrix_d(&p, 0.2, 7, 0.5, 0.7));
        let mut want: Vec<f64> = p
            .eigenvalues()
            .iter()
            .map(|&l| eigen_d(0.5, 0.7, 0.2, 7, l))
            .collect();
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }
}

#[test]
fn expectation_decays_iff_roots_inside_unit_circle() {
    let p = problem(3, 7);
    let phi0 = Vector::from(vec![1.0, -1.0, 0.5]);
    let mut both = [0usize; 2];
    for &alpha in &[0.0, 0.3, 0.5, 0.9] {
        for &beta in &[0.2, 0.7, 1.5, 3.0] {
            for &omega in &[0.05, 0.5] {
                for &m in &[1usize, 10] {
                    let c = config(p.clone(), omega, m, alpha, beta);
                    let seq = expected_phi_sequence(&c, &phi0).unwrap();
                    let inside = p.eigenvalues().iter().all(|&l| {
                        root_moduli(alpha, eigen_d(alpha, beta, omega, m, l)).0 < 1.0
                    });
                    let max_mod = p
                        .eigenvalues()
                        .iter()
                        .map(|&l| root_moduli(alpha, eigen_d(alpha, beta, omega, m, l)).0)
                        .fold(0.0, f64::max);
                    if (max_mod - 1.0).abs() < 0.01 {
                        continue;
                    }
                    let tail = seq.last().unwrap().norm();
                    assert_eq!(tail < 1e-3 * phi0.norm(), inside, "α={alpha} β={beta} ω={omega} m={m}");
                    both[usize::from(inside)] += 1;
                }
            }
        }
    }
    assert!(both[0] > 0 && both[1] > 0, "{both:?}");
}

#[test]
fn zero_momentum_is_geometric_in_matrix_form() {
    let p = problem(4, 3);
    let c = config(p.clone(), 0.2, 5, 0.0, 0.7);
    let phi0 = Vector::from(vec![1.0, 2.0, -1.0, 0.0]);
    let seq = expected_phi_sequence(&c, &phi0).unwrap();
    let step = matrix_d(&p, 0.2, 5, 0.0, 0.7);
    let mut cur = phi0.clone();
    for v in seq.iter().take(40) {
        assert!(v.max_abs_diff(&cur) < 1e-12);
        cur = step.matvec(&cur).unwrap();
    }
}

#[test]
fn boundedness_flag_matches_unrolled_recursion() {
    let p = problem(3, 9);
    for &gamma in &[0.6, 0.9, 1.1, 1.25, 1.4] {
        let mut c = config(p.clone(), 0.01, 8, 0.5, 0.7);
        c.gamma = gamma;
        c.horizon = 3000;
        let v = variance_sequence(&c).unwrap();
        let tail = &v.trace[2000..];
        let settled = tail.iter().all(|x| x.is_finite() && *x >= 0.0)
            && (tail[tail.len() - 1] - tail[0]).abs() <= 1e-6 * tail[0].abs();
        assert_eq!(v.bounded, settled, "γ={gamma}");
    }
}

#[test]
fn asymptote_vanishes_with_learning_rate() {
    let p = QuadraticProblem::isotropic(2, 1.0).unwrap();
    let big = variance_sequence(&config(p.clone(), 0.01, 10, 0.5, 0.7)).unwrap();
    let tiny = variance_sequence(&config(p, 1e-5, 10, 0.5, 0.7)).unwrap();
    assert!(tiny.asymptote.unwrap() < 1e-6 * big.asymptote.unwrap());
}

#[test]
fn converges_with_beta_above_alpha_and_large_m() {
    let p = problem(4, 5);
    let pred = predict(&config(p, 0.5, 200, 0.5, 0.7), &Vector::zeros(4)).unwrap();
    assert!(pred.converges);
    assert!(pred.expected_phi.iter().all(|v| v.norm() == 0.0));
    let last = *pred.variance_trace.last().unwrap();
    assert!((last - pred.variance_asymptote.unwrap()).abs() < 1e-9 * last);
    assert_eq!(pred.variance_trace.len(), 601);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Non-negativity holds wherever the recursion is bounded. The upper part
    /// of the γ interval is not bounded for this recursion (see the
    /// `upper_part_of_gamma_interval_is_unbounded` unit test).
    #[test]
    fn variance_non_negative_inside_interval(seed in any::<u64>(), frac in 0.05f64..0.95, omega in 0.001f64..0.3) {
        let p = problem(3, seed);
        let mut c = config(p, omega, 8, 0.5, 0.7);
        c.horizon = 200;
        let (lo, hi) = noloco_core::optimizers::gamma_bounds(0.5, 2).unwrap();
        c.gamma = lo + frac * (hi - lo);
        let v = variance_sequence(&c).unwrap();
        prop_assert!(v.converges);
        if v.bounded {
            prop_assert!(v.trace.iter().all(|&x| x >= 0.0));
        }
    }
}

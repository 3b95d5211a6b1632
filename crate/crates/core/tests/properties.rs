mod common;

use blochhom::derivs::MultiIndex;
use blochhom::fiber::garding_slack;
use blochhom::spectra::{ground_state, normalize_phase};
use blochhom::supercell::{identity_check, smooth_random_function};
use blochhom::tensor::{harmonic_mean_matrix, order_margin, tensor_from_cell};
use blochhom::*;
use common::laminate;
use num_complex::Complex64;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

/// Random symmetric elliptic 2×2 trig coefficient `M₀ + s·cos(y₁)M₁ + t·sin(y₂)M₂`.
fn random_trig(vals: [f64; 5]) -> PeriodicCoefficient {
    use blochhom::torus::{TrigFactor, TrigFn, TrigTerm};
    let factor = |func, k1, k2| vec![TrigFactor { func, k: k1 }, TrigFactor { func: TrigFn::Cos, k: k2 }];
    let [s, t, off, a11, a22] = vals;
    let terms = vec![
        TrigTerm { coeff: 1.0, factors: vec![], matrix: Some(vec![vec![2.0 + a11, off], vec![off, 2.0 + a22]]) },
        TrigTerm { coeff: s, factors: factor(TrigFn::Cos, 1, 0), matrix: Some(vec![vec![1.0, 0.0], vec![0.0, 0.0]]) },
        TrigTerm { coeff: t, factors: factor(TrigFn::Sin, 1, 1), matrix: Some(vec![vec![0.0, 0.2], vec![0.2, 1.0]]) },
    ];
    load_coefficient(&CoefficientDescription::trig(2, terms, 17)).unwrap()
}

fn trig_values() -> impl Strategy<Value = [f64; 5]> {
    [-0.5..0.5f64, -0.5..0.5f64, -0.4..0.4f64, 0.0..1.0f64, 0.0..1.0f64]
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn fiber_matrix_is_hermitian(vals in trig_values(), rho in 0.0..3.0f64, e1 in -0.5..0.5f64, e2 in -0.5..0.5f64) {
        let a = random_trig(vals);
        let f = assemble_fiber(&a, &PlaneWaveBasis::new(2, 4).unwrap(), rho, &[e1, e2]).unwrap();
        prop_assert!(f.hermitian_defect() < 1e-13);
    }

    #[test]
    fn lambda_is_even_in_eta(vals in trig_values(), rho in 0.0..3.0f64, e1 in -0.5..0.5f64, e2 in -0.5..0.5f64) {
        let a = random_trig(vals);
        let basis = PlaneWaveBasis::new(2, 4).unwrap();
        let plus = solve_fiber(&assemble_fiber(&a, &basis, rho, &[e1, e2]).unwrap(), 3).unwrap();
        let minus = solve_fiber(&assemble_fiber(&a, &basis, rho, &[-e1, -e2]).unwrap(), 3).unwrap();
        for (p, m) in plus.eigenvalues.iter().zip(&minus.eigenvalues) {
            prop_assert!((p - m).abs() < 1e-10 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn lambda_is_monotone_in_rho(eta in -0.5..0.5f64, r1 in 0.0..4.0f64, dr in 0.01..4.0f64) {
        let a = laminate(65);
        let basis = PlaneWaveBasis::new(1, 12).unwrap();
        let lo = solve_fiber(&assemble_fiber(&a, &basis, r1, &[eta]).unwrap(), 3).unwrap();
        let hi = solve_fiber(&assemble_fiber(&a, &basis, r1 + dr, &[eta]).unwrap(), 3).unwrap();
        for (l, h) in lo.eigenvalues.iter().zip(&hi.eigenvalues) {
            prop_assert!(*h >= *l - 1e-10 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn garding_slack_is_nonnegative(vals in trig_values(), rho in 0.0..3.0f64, seed in 0u64..1000, e in -0.5..0.5f64) {
        let a = random_trig(vals);
        let f = assemble_fiber(&a, &PlaneWaveBasis::new(2, 4).unwrap(), rho, &[e, -e]).unwrap();
        let rep = garding_check(&f, 50, seed).unwrap();
        prop_assert_eq!(rep.violations, 0);
        // The constant mode carries the smallest slack, C* − α/2 ≥ 0.
        let mut u = vec![Complex64::new(0.0, 0.0); f.size()];
        u[0] = Complex64::new((2.0 * std::f64::consts::PI).powi(-1), 0.0);
        prop_assert!(garding_slack(&f, &u) >= -1e-9);
    }

    #[test]
    fn tensor_lies_between_harmonic_and_arithmetic_means(vals in trig_values(), rho in 0.0..5.0f64) {
        let a = random_trig(vals);
        let t = tensor_from_cell(&a, &PlaneWaveBasis::new(2, 5).unwrap(), rho).unwrap();
        let h = harmonic_mean_matrix(&a);
        let m = a.mean_matrix();
        prop_assert!(order_margin(&h, &t.matrix, 2) >= -1e-10);
        prop_assert!(order_margin(&t.matrix, &m, 2) >= -1e-10);
    }

    #[test]
    fn gauge_is_phase_invariant(theta in 0.0..std::f64::consts::TAU, scale in 0.1..10.0f64, eta in -0.3..0.3f64) {
        let a = laminate(65);
        let basis = PlaneWaveBasis::new(1, 12).unwrap();
        let (_, v) = ground_state(&assemble_fiber(&a, &basis, 1.0, &[eta]).unwrap()).unwrap();
        let rotated: Vec<Complex64> = v.iter().map(|c| c * Complex64::from_polar(scale, theta)).collect();
        let g1 = gauge_fix(&v, &[eta], 1).unwrap();
        let g2 = gauge_fix(&rotated, &[eta], 1).unwrap();
        for (x, y) in g1.coeffs.iter().zip(&g2.coeffs) {
            prop_assert!((x - y).norm() < 1e-12);
        }
        let mut n1 = v.clone();
        let mut n2 = rotated;
        normalize_phase(&mut n1, 1);
        normalize_phase(&mut n2, 1);
        prop_assert!(n1[0].im.abs() < 1e-14 && n1[0].re > 0.0);
        for (x, y) in n1.iter().zip(&n2) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn supercell_parseval_and_inversion(cells in 1usize..6, cutoff in 2usize..6, rho in 0.0..3.0f64, seed in 0u64..1000) {
        let eps = 0.5;
        let p = SupercellProblem::new(laminate(65), PlaneWaveBasis::new(1, cutoff).unwrap(), eps, cells, rho * eps).unwrap();
        let f = smooth_random_function(&p, 4.0, seed).unwrap();
        let g = smooth_random_function(&p, 4.0, seed + 1).unwrap();
        let rep = identity_check(&p, &f, &g).unwrap();
        prop_assert!(rep.max() < 1e-10, "{:?}", rep);
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn binomials_sum_to_powers_of_two(c in proptest::collection::vec(0u8..4, 1..4)) {
        let beta = MultiIndex::from_components(&c);
        let total: u64 = beta.nonzero_sub_indices().iter().map(|g| beta.binomial(g)).sum::<u64>() + 1;
        prop_assert_eq!(total, 1u64 << beta.order());
    }

    #[test]
    fn mollifier_preserves_ellipticity(width in 0.05..3.0f64, q in 1.1..4.0f64) {
        let a = laminate(129);
        let m = blochhom::cell::mollify(&a, width, q).unwrap();
        prop_assert!(m.b.alpha() >= a.alpha() - 1e-12);
        prop_assert!(m.b.upper() <= a.upper() + 1e-12);
        prop_assert!(m.achieved >= 0.0);
    }
}

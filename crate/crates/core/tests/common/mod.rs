#![allow(dead_code)]

use blochhom::torus::{TrigFactor, TrigFn, TrigTerm};
use blochhom::{load_coefficient, CoefficientDescription, PeriodicCoefficient};

/// `a = 1` on `[0, π)`, `a = 4` on `[π, 2π)`: harmonic mean 1.6, mean 2.5.
pub fn laminate(n_per_axis: usize) -> PeriodicCoefficient {
    load_coefficient(&CoefficientDescription::laminate([1.0, 4.0], 0.5, n_per_axis)).unwrap()
}

pub fn sin_sin(k: u32) -> Vec<TrigFactor> {
    vec![
        TrigFactor { func: TrigFn::Sin, k },
        TrigFactor { func: TrigFn::Sin, k },
    ]
}

/// `(2 + sin y₁ sin y₂) I`.
pub fn trig2() -> PeriodicCoefficient {
    let terms = vec![
        TrigTerm { coeff: 2.0, factors: vec![], matrix: None },
        TrigTerm { coeff: 1.0, factors: sin_sin(1), matrix: None },
    ];
    load_coefficient(&CoefficientDescription::trig(2, terms, 65)).unwrap()
}

/// Full matrix coefficient with off-diagonal oscillation.
pub fn anisotropic2() -> PeriodicCoefficient {
    let terms = vec![
        TrigTerm { coeff: 1.0, factors: vec![], matrix: Some(vec![vec![3.0, 0.5], vec![0.5, 2.0]]) },
        TrigTerm {
            coeff: 0.5,
            factors: vec![
                TrigFactor { func: TrigFn::Cos, k: 1 },
                TrigFactor { func: TrigFn::Cos, k: 0 },
            ],
            matrix: Some(vec![vec![1.0, 0.3], vec![0.3, 0.0]]),
        },
        TrigTerm { coeff: 0.4, factors: sin_sin(1), matrix: Some(vec![vec![0.0, 1.0], vec![1.0, 1.0]]) },
    ];
    load_coefficient(&CoefficientDescription::trig(2, terms, 33)).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

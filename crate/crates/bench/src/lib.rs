//! Shared fixtures for the criterion benches.

use blochhom::torus::{TrigFactor, TrigFn, TrigTerm};
use blochhom::{load_coefficient, CoefficientDescription, PeriodicCoefficient};

/// Two-phase laminate `[1, 4]` with equal volume fractions.
pub fn laminate(n_per_axis: usize) -> PeriodicCoefficient {
    load_coefficient(&CoefficientDescription::laminate([1.0, 4.0], 0.5, n_per_axis)).expect("valid laminate")
}

/// `(2 + sin y₁ sin y₂) I` on the 2-torus.
pub fn trig2(n_per_axis: usize) -> PeriodicCoefficient {
    let sin = |k| TrigFactor { func: TrigFn::Sin, k };
    let terms = vec![
        TrigTerm { coeff: 2.0, factors: vec![], matrix: None },
        TrigTerm { coeff: 1.0, factors: vec![sin(1), sin(1)], matrix: None },
    ];
    load_coefficient(&CoefficientDescription::trig(2, terms, n_per_axis)).expect("valid trig coefficient")
}

//! Bloch-wave homogenization of `κ²Δ² − div A(x/ε)∇` on periodic media.

pub mod cell;
pub mod derivs;
pub mod error;
pub mod fiber;
pub mod linalg;
pub mod matfree;
pub mod spectra;
pub mod supercell;
pub mod tensor;
pub mod torus;

pub use cell::{solve_cell, CellOperator, CorrectorSet};
pub use derivs::{derivative_recursion, DerivativeTable, MultiIndex};
pub use error::{Error, Result};
pub use matfree::tensor_from_cell_matrix_free;
pub use fiber::{assemble_fiber, garding_check, FiberOperator, PlaneWaveBasis};
pub use spectra::{band_sweep, gauge_fix, solve_fiber, BlochBand, FiberSpectrum};
pub use supercell::{bloch_transform, homogenization_experiment, SupercellProblem};
pub use tensor::{HomogenizedTensor, Regime, TensorLabel, TensorRoute};
pub use torus::{
    load_coefficient, mean_value, sobolev_norm, CoefficientDescription, PeriodicCoefficient,
    PeriodicFunction, TorusGrid,
};

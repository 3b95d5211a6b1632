//! Homogenized tensors by the cell-average route, by finite differences of
//! the first Bloch eigenvalue, and for the three `ρ = κ/ε` regimes.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell, CorrectorSet};
use crate::error::{Error, Result};
use crate::fiber::{assemble_fiber, PlaneWaveBasis};
use crate::linalg::{inverse, loglog_slope, sym_eigenvalues};
use crate::spectra::{gauge_fix, ground_state};
use crate::torus::PeriodicCoefficient;

/// Default finite-difference step for the Hessian route.
pub const DEFAULT_FD_STEP: f64 = 1e-3;
/// Largest accepted relative disagreement between steps `h` and `h/2`.
pub const RICHARDSON_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorRoute {
    CellAverage,
    BlochHessian,
    DerivativeRecursion,
    RegimeLimit,
}

impl fmt::Display for TensorRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CellAverage => "cell-average",
            Self::BlochHessian => "bloch-hessian",
            Self::DerivativeRecursion => "derivative-recursion",
            Self::RegimeLimit => "regime-limit",
        })
    }
}

/// Limit of `ρ = κ/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "regime", content = "theta")]
pub enum Regime {
    Zero,
    Theta(f64),
    Infinity,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("zero"),
            Self::Theta(t) => write!(f, "theta({t})"),
            Self::Infinity => f.write_str("infinity"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TensorLabel {
    Rho(f64),
    Regime(Regime),
}

impl fmt::Display for TensorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rho(r) => write!(f, "{r}"),
            Self::Regime(r) => write!(f, "{r}"),
        }
    }
}

/// Symmetric `d×d` effective matrix with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct HomogenizedTensor {
    pub dim: usize,
    /// Row-major, symmetrized.
    pub matrix: Vec<f64>,
    pub route: TensorRoute,
    pub label: TensorLabel,
    /// `max |T_kl − T_lk|` before symmetrization.
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
    /// Relative disagreement between steps `h` and `h/2` (Hessian route only).
    pub step_disagreement: Option<f64>,
}

impl HomogenizedTensor {
    pub fn new(dim: usize, raw: Vec<f64>, route: TensorRoute, label: TensorLabel) -> Self {
        let mut defect: f64 = 0.0;
        let mut matrix = raw.clone();
        for k in 0..dim {
            for l in 0..dim {
                defect = defect.max((raw[k * dim + l] - raw[l * dim + k]).abs());
                matrix[k * dim + l] = 0.5 * (raw[k * dim + l] + raw[l * dim + k]);
            }
        }
        let min_eigenvalue = sym_eigenvalues(&matrix, dim)[0];
        Self {
            dim,
            matrix,
            route,
            label,
            symmetry_defect: defect,
            min_eigenvalue,
            step_disagreement: None,
        }
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.matrix[k * self.dim + l]
    }

    /// Frobenius norm of the difference.
    pub fn distance(&self, other: &[f64]) -> f64 {
        self.matrix
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `max |T − S| / max |T|`, entrywise.
    pub fn relative_difference(&self, other: &HomogenizedTensor) -> f64 {
        let scale = self.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = self
            .matrix
            .iter()
            .zip(&other.matrix)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        diff / scale
    }
}

/// `M_Y(e_k·A e_l + e_k·A∇χ_l)` from solved correctors.
pub fn tensor_from_correctors(a: &PeriodicCoefficient, set: &CorrectorSet) -> HomogenizedTensor {
    let basis = &set.basis;
    let d = basis.dim();
    let mean = a.mean_matrix();
    let mut raw = vec![0.0; d * d];
    for k in 0..d {
        for l in 0..d {
            let mut s = Complex64::new(mean[k * d + l], 0.0);
            for i in 1..basis.size() {
                let n = basis.wavevector(i);
                let minus: Vec<i64> = n.iter().map(|v| -v).collect();
                for r in 0..d {
                    s += a.fourier_entry(k, r, &minus)
                        * Complex64::new(0.0, n[r] as f64)
                        * set.chi[l][i];
                }
            }
            raw[k * d + l] = s.re;
        }
    }
    HomogenizedTensor::new(d, raw, TensorRoute::CellAverage, TensorLabel::Rho(set.rho))
}

/// Cell-average route at ratio `ρ`.
pub fn tensor_from_cell(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
) -> Result<HomogenizedTensor> {
    Ok(tensor_from_correctors(a, &solve_cell(a, basis, rho)?))
}

fn lambda1(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, rho: f64, eta: &[f64]) -> Result<f64> {
    Ok(ground_state(&assemble_fiber(a, basis, rho, eta)?)?.0)
}

/// Central-difference Hessian and gradient of `λ₁` at 0 with step `s`.
fn fd_derivatives(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    s: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = basis.dim();
    let unit = |k: usize, t: f64| {
        let mut e = vec![0.0; d];
        e[k] = t;
        e
    };
    let l0 = lambda1(a, basis, rho, &vec![0.0; d])?;
    let mut hess = vec![0.0; d * d];
    let mut grad = vec![0.0; d];
    for k in 0..d {
        let lp = lambda1(a, basis, rho, &unit(k, s))?;
        let lm = lambda1(a, basis, rho, &unit(k, -s))?;
        hess[k * d + k] = (lp - 2.0 * l0 + lm) / (s * s);
        grad[k] = (lp - lm) / (2.0 * s);
        for l in 0..k {
            let pt = |sk: f64, sl: f64| {
                let mut e = vec![0.0; d];
                e[k] = sk * s;
                e[l] = sl * s;
                e
            };
            let lpp = lambda1(a, basis, rho, &pt(1.0, 1.0))?;
            let lpm = lambda1(a, basis, rho, &pt(1.0, -1.0))?;
            let lmp = lambda1(a, basis, rho, &pt(-1.0, 1.0))?;
            let lmm = lambda1(a, basis, rho, &pt(-1.0, -1.0))?;
            let v = (lpp - lpm - lmp + lmm) / (4.0 * s * s);
            hess[k * d + l] = v;
            hess[l * d + k] = v;
        }
    }
    Ok((hess, grad))
}

/// Half the Hessian of `λ₁^ρ` at `η = 0` by central differences.
///
/// Differences are taken at `h` and `h/2`; the result is the Richardson
/// extrapolation `(4D(h/2) − D(h))/3`, and `StepTooLarge` is raised when the
/// two raw differences disagree by more than [`RICHARDSON_TOL`] relative.
pub fn tensor_from_hessian(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    h: f64,
) -> Result<HomogenizedTensor> {
    let d = basis.dim();
    // The farthest sample sits at |η| = h√2; its eigenvector must be gauge-valid.
    let far = vec![h; d];
    let f = assemble_fiber(a, basis, rho, &far)?;
    gauge_fix(&ground_state(&f)?.1, &far, d)?;
    let (coarse, _) = fd_derivatives(a, basis, rho, h)?;
    let (fine, _) = fd_derivatives(a, basis, rho, h / 2.0)?;
    let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let disagreement = coarse
        .iter()
        .zip(&fine)
        .fold(0.0f64, |m, (c, f)| m.max((c - f).abs()))
        / scale;
    if disagreement > RICHARDSON_TOL {
        return Err(Error::StepTooLarge { disagreement });
    }
    let raw: Vec<f64> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| 0.5 * (4.0 * f - c) / 3.0)
        .collect();
    let mut t = HomogenizedTensor::new(d, raw, TensorRoute::BlochHessian, TensorLabel::Rho(rho));
    t.step_disagreement = Some(disagreement);
    Ok(t)
}

/// Central-difference gradient of `λ₁^ρ` at 0.
pub fn eta_gradient_at_zero(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    h: f64,
) -> Result<Vec<f64>> {
    Ok(fd_derivatives(a, basis, rho, h)?.1)
}

/// Effective tensor of the regime: `A^{0,hom}`, `A^{θ,hom}` or `M_Y(A)`.
pub fn regime_tensor(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    regime: Regime,
) -> Result<HomogenizedTensor> {
    let mut t = match regime {
        Regime::Zero => tensor_from_cell(a, basis, 0.0)?,
        Regime::Theta(theta) => {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::BadDescription(format!("theta must lie in (0, inf), got {theta}")));
            }
            tensor_from_cell(a, basis, theta)?
        }
        Regime::Infinity => HomogenizedTensor::new(
            a.dim(),
            a.mean_matrix(),
            TensorRoute::RegimeLimit,
            TensorLabel::Regime(regime),
        ),
    };
    t.label = TensorLabel::Regime(regime);
    Ok(t)
}

/// `M_Y(A^{-1})^{-1}`, the harmonic-mean lower bound.
pub fn harmonic_mean_matrix(a: &PeriodicCoefficient) -> Vec<f64> {
    let d = a.dim();
    let n = a.grid().len();
    let mut acc = vec![0.0; d * d];
    for p in 0..n {
        for (s, v) in acc.iter_mut().zip(inverse(a.sample(p), d)) {
            *s += v / n as f64;
        }
    }
    inverse(&acc, d)
}

/// Smallest eigenvalue of `hi − lo`; nonnegative iff `lo ⪯ hi`.
pub fn order_margin(lo: &[f64], hi: &[f64], d: usize) -> f64 {
    let diff: Vec<f64> = hi.iter().zip(lo).map(|(h, l)| h - l).collect();
    sym_eigenvalues(&diff, d)[0]
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub rho: f64,
    pub tensor: Vec<f64>,
    /// `‖A^{ρ,hom} − M_Y(A)‖_F`
    pub to_mean: f64,
    /// `‖A^{ρ,hom} − A^{0,hom}‖_F`
    pub to_classical: f64,
    /// Smallest eigenvalue of `A^{ρ,hom} − A^{0,hom}`.
    pub margin_below: f64,
    /// Smallest eigenvalue of `M_Y(A) − A^{ρ,hom}`.
    pub margin_above: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub classical: Vec<f64>,
    pub mean: Vec<f64>,
    pub rows: Vec<StabilityRow>,
    /// Log-log slope of `to_mean` over `ρ ∈ [ρ_max/10, ρ_max]`.
    pub top_decade_slope: f64,
    /// `to_classical` at the smallest `ρ`.
    pub smallest_rho_gap: f64,
}

/// `A^{ρ,hom}` over `rho_list` against its `ρ → 0` and `ρ → ∞` limits.
pub fn stability_sweep(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho_list: &[f64],
) -> Result<StabilityReport> {
    let d = a.dim();
    let classical = tensor_from_cell(a, basis, 0.0)?.matrix;
    let mean = a.mean_matrix();
    let tensors: Vec<HomogenizedTensor> = rho_list
        .par_iter()
        .map(|&r| tensor_from_cell(a, basis, r))
        .collect::<Result<_>>()?;
    let rows: Vec<StabilityRow> = rho_list
        .iter()
        .zip(tensors)
        .map(|(&rho, t)| StabilityRow {
            rho,
            to_mean: t.distance(&mean),
            to_classical: t.distance(&classical),
            margin_below: order_margin(&classical, &t.matrix, d),
            margin_above: order_margin(&t.matrix, &mean, d),
            tensor: t.matrix,
        })
        .collect();
    let rho_max = rho_list.iter().cloned().fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.rho >= rho_max / 10.0 * (1.0 - 1e-12) && r.to_mean > 0.0)
        .map(|r| (r.rho, r.to_mean))
        .unzip();
    let top_decade_slope = if xs.len() >= 2 { loglog_slope(&xs, &ys) } else { f64::NAN };
    let smallest_rho_gap = rows
        .iter()
        .min_by(|a, b| a.rho.total_cmp(&b.rho))
        .map_or(f64::NAN, |r| r.to_classical);
    Ok(StabilityReport {
        classical,
        mean,
        rows,
        top_decade_slope,
        smallest_rho_gap,
    })
}

/// CSV `route, rho, k, l, value` (1-based `k`, `l`).
pub fn write_tensor_csv<'a>(
    tensors: impl IntoIterator<Item = &'a HomogenizedTensor>,
    w: impl Write,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["route", "rho", "k", "l", "value"])?;
    for t in tensors {
        for k in 0..t.dim {
            for l in 0..t.dim {
                wtr.write_record([
                    t.route.to_string(),
                    t.label.to_string(),
                    (k + 1).to_string(),
                    (l + 1).to_string(),
                    t.get(k, l).to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_tensor_every_route() {
        let a = PeriodicCoefficient::identity(2);
        let b = PlaneWaveBasis::new(2, 3).unwrap();
        for rho in [0.0, 1.0, 3.0] {
            let t = tensor_from_cell(&a, &b, rho).unwrap();
            assert_eq!(t.matrix, vec![1.0, 0.0, 0.0, 1.0]);
        }
        let h = tensor_from_hessian(&a, &b, 1.0, DEFAULT_FD_STEP).unwrap();
        for (x, y) in h.matrix.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((x - y).abs() < 1e-7, "{:?}", h.matrix);
        }
    }

    #[test]
    fn regime_infinity_is_mean() {
        let a = PeriodicCoefficient::constant(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let b = PlaneWaveBasis::new(2, 2).unwrap();
        let t = regime_tensor(&a, &b, Regime::Infinity).unwrap();
        assert_eq!(t.matrix, a.mean_matrix());
        assert_eq!(t.route, TensorRoute::RegimeLimit);
    }

    #[test]
    fn regime_labels_print() {
        assert_eq!(Regime::Theta(1.5).to_string(), "theta(1.5)");
        assert_eq!(TensorLabel::Rho(4.0).to_string(), "4");
    }
}

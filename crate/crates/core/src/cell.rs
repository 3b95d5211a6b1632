//! Cell problems `ρ²Δ²χ_j − div A(e_j + ∇χ_j) = 0` on zero-mean periodic functions.
//!
//! The zero-mean subspace is realized by deleting the constant mode from the
//! `η = 0` fiber matrix; what remains is Hermitian positive definite and is
//! factorized once per `(A, ρ)`.

use std::io::Write;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{assemble_fiber, FiberOperator, PlaneWaveBasis};
use crate::torus::{PeriodicCoefficient, PeriodicFunction};

/// Weak-form residual bound relative to `‖v‖_{H²}`.
pub const WEAK_RESIDUAL_TOL: f64 = 1e-8;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Factorized `𝒜^ρ(0)` on the zero-mean subspace.
pub struct CellOperator {
    fiber: FiberOperator,
    llt: Llt<Complex64>,
}

impl CellOperator {
    pub fn new(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, rho: f64) -> Result<Self> {
        let fiber = assemble_fiber(a, basis, rho, &vec![0.0; basis.dim()])?;
        let n = basis.size() - 1;
        let full = fiber.matrix();
        let reduced = Mat::<Complex64>::from_fn(n, n, |i, j| full[(i + 1, j + 1)]);
        let llt = reduced
            .llt(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("zero-mean cell matrix: {e:?}")))?;
        Ok(Self { fiber, llt })
    }

    pub fn fiber(&self) -> &FiberOperator {
        &self.fiber
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        self.fiber.basis()
    }

    pub fn rho(&self) -> f64 {
        self.fiber.rho()
    }

    /// Solve on the non-constant modes; entry 0 of `rhs` is ignored and of the result is 0.
    pub fn solve_many(&self, rhs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let n = self.basis().size() - 1;
        let b = Mat::<Complex64>::from_fn(n, rhs.len(), |i, j| rhs[j][i + 1]);
        let x = self.llt.solve(&b);
        (0..rhs.len())
            .map(|j| {
                std::iter::once(czero())
                    .chain((0..n).map(|i| x[(i, j)]))
                    .collect()
            })
            .collect()
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        self.solve_many(std::slice::from_ref(&rhs.to_vec())).remove(0)
    }
}

/// Fourier coefficients of `div(A e_j)` on the basis: `i Σ_l m_l Â_{lj}(m)`.
pub fn cell_rhs(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, j: usize) -> Vec<Complex64> {
    let d = basis.dim();
    (0..basis.size())
        .map(|i| {
            let m = basis.wavevector(i);
            let mut s = czero();
            for l in 0..d {
                s += a.fourier_entry(l, j, m) * m[l] as f64;
            }
            Complex64::new(0.0, 1.0) * s
        })
        .collect()
}

/// Per-corrector diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrectorEnergy {
    /// `ρ‖Δχ‖_{L²}`
    pub rho_laplacian: f64,
    /// `‖χ‖_{H¹}`
    pub h1: f64,
    /// `ρ²‖∇³χ‖_{L²}`
    pub rho2_grad3: f64,
}

/// Zero-mean correctors `χ_j^ρ`, `j = 1..d`, as basis coefficients.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub rho: f64,
    pub basis: PlaneWaveBasis,
    pub chi: Vec<Vec<Complex64>>,
    pub energies: Vec<CorrectorEnergy>,
    /// `max_{j,v} |a^ρ[0](χ_j, v) + ∫A e_j·∇v̄| / ‖v‖_{H²}` over basis `v`.
    pub weak_residual: f64,
}

impl CorrectorSet {
    pub fn chi_function(&self, j: usize) -> PeriodicFunction {
        self.basis.to_function(&self.chi[j])
    }

    /// `ρ‖Δχ_j‖ + ‖χ_j‖_{H¹}`, the energy-estimate quantity.
    pub fn energy_bound(&self, j: usize) -> f64 {
        self.energies[j].rho_laplacian + self.energies[j].h1
    }
}

/// Squared `L²(Y)` norm of `∇u`.
pub fn gradient_norm_sq(basis: &PlaneWaveBasis, c: &[Complex64]) -> f64 {
    basis.weighted_norm_sq(c, |i| basis.norm_sq(i))
}

fn energies(basis: &PlaneWaveBasis, rho: f64, c: &[Complex64]) -> CorrectorEnergy {
    CorrectorEnergy {
        rho_laplacian: rho * basis.weighted_norm_sq(c, |i| basis.norm_sq(i).powi(2)).sqrt(),
        h1: basis.sobolev_norm(c, 1.0),
        rho2_grad3: rho * rho * basis.weighted_norm_sq(c, |i| basis.norm_sq(i).powi(3)).sqrt(),
    }
}

/// Solve the `d` cell problems with a shared factorization.
pub fn solve_cell(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, rho: f64) -> Result<CorrectorSet> {
    let op = CellOperator::new(a, basis, rho)?;
    solve_cell_with(&op, a)
}

pub fn solve_cell_with(op: &CellOperator, a: &PeriodicCoefficient) -> Result<CorrectorSet> {
    let basis = op.basis();
    let d = basis.dim();
    let rhs: Vec<Vec<Complex64>> = (0..d).map(|j| cell_rhs(a, basis, j)).collect();
    let chi = op.solve_many(&rhs);
    let vol = basis.grid().cell_volume();
    let mut weak_residual: f64 = 0.0;
    for (x, b) in chi.iter().zip(&rhs) {
        let kx = op.fiber().apply(x);
        for i in 1..basis.size() {
            let v_h2 = vol.sqrt() * (1.0 + basis.norm_sq(i));
            weak_residual = weak_residual.max(vol * (kx[i] - b[i]).norm() / v_h2);
        }
    }
    if !weak_residual.is_finite() {
        return Err(Error::SingularSystem("non-finite corrector".into()));
    }
    Ok(CorrectorSet {
        rho: op.rho(),
        basis: basis.clone(),
        energies: chi.iter().map(|c| energies(basis, op.rho(), c)).collect(),
        chi,
        weak_residual,
    })
}

/// `(Σ_j ‖∇(χ_j − ψ_j)‖²)^{1/2}`.
pub fn corrector_gradient_distance(x: &CorrectorSet, y: &CorrectorSet) -> f64 {
    x.chi
        .iter()
        .zip(&y.chi)
        .map(|(a, b)| {
            let diff: Vec<Complex64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
            gradient_norm_sq(&x.basis, &diff)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoStabilityReport {
    pub rho1: f64,
    pub rho2: f64,
    pub gradient_difference: f64,
    /// `|1 − (ρ₁/ρ₂)²|`
    pub scale: f64,
    /// `gradient_difference / scale`, 0 when both vanish.
    pub fitted_constant: f64,
}

/// Compare `∇χ^{ρ₁}` and `∇χ^{ρ₂}` against the scale `|1 − (ρ₁/ρ₂)²|`.
pub fn corrector_rho_stability(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho1: f64,
    rho2: f64,
) -> Result<RhoStabilityReport> {
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::BadDescription("rho stability needs rho1, rho2 > 0".into()));
    }
    let c1 = solve_cell(a, basis, rho1)?;
    let c2 = solve_cell(a, basis, rho2)?;
    let diff = corrector_gradient_distance(&c1, &c2);
    let scale = (1.0 - (rho1 / rho2).powi(2)).abs();
    let fitted = if scale > 0.0 {
        diff / scale
    } else if diff <= 1e-12 {
        0.0
    } else {
        return Err(Error::SingularSystem(format!(
            "equal rho but corrector gradients differ by {diff:.3e}"
        )));
    };
    Ok(RhoStabilityReport {
        rho1,
        rho2,
        gradient_difference: diff,
        scale,
        fitted_constant: fitted,
    })
}

/// Smoothed coefficient `B = A * F_K` with the Fejér kernel.
#[derive(Debug, Clone)]
pub struct MollifiedCoefficient {
    pub b: PeriodicCoefficient,
    pub kernel_width: f64,
    /// Fejér order `K`; the multiplier is `Π_a (1 − |k_a|/(K+1))₊`.
    pub order: usize,
    pub q: f64,
    /// `‖A − B‖_{L^q}` by grid quadrature, Frobenius norm pointwise.
    pub achieved: f64,
}

/// Convolve `A` with the tensor Fejér kernel of width `kernel_width`.
///
/// The kernel is nonnegative with unit mass and its order `K = ⌈2π/w⌉ − 1` is
/// capped at the grid half-width, so on the grid `B` is a convex combination
/// of samples of `A`: symmetry and the ellipticity constant carry over exactly.
pub fn mollify(a: &PeriodicCoefficient, kernel_width: f64, q: f64) -> Result<MollifiedCoefficient> {
    if !(kernel_width > 0.0 && kernel_width.is_finite()) {
        return Err(Error::BadDescription("kernel width must be positive".into()));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::BadDescription(format!("q must lie in (1, inf), got {q}")));
    }
    let grid = a.grid().clone();
    let d = grid.dim();
    let order = ((2.0 * std::f64::consts::PI / kernel_width).ceil() as usize)
        .saturating_sub(1)
        .min(grid.half_width());
    let multiplier: Vec<f64> = (0..grid.len())
        .map(|i| {
            grid.wavenumber(i)
                .iter()
                .map(|k| (1.0 - k.unsigned_abs() as f64 / (order + 1) as f64).max(0.0))
                .product()
        })
        .collect();
    let mut samples = vec![0.0; grid.len() * d * d];
    for e in 0..d * d {
        let smoothed: Vec<Complex64> = a
            .fourier_component(e / d, e % d)
            .iter()
            .zip(&multiplier)
            .map(|(c, m)| c * m)
            .collect();
        let vals = crate::torus::inverse_dft(&grid, &smoothed);
        for (p, v) in vals.iter().enumerate() {
            samples[p * d * d + e] = v.re;
        }
    }
    // Exact symmetry: average the two triangles.
    for p in 0..grid.len() {
        for j in 0..d {
            for l in (j + 1)..d {
                let s = 0.5 * (samples[p * d * d + j * d + l] + samples[p * d * d + l * d + j]);
                samples[p * d * d + j * d + l] = s;
                samples[p * d * d + l * d + j] = s;
            }
        }
    }
    let b = PeriodicCoefficient::from_samples(grid.clone(), samples)?;
    let w = grid.cell_volume() / grid.len() as f64;
    let achieved = (0..grid.len())
        .map(|p| {
            let fro: f64 = a
                .sample(p)
                .iter()
                .zip(b.sample(p))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            fro.powf(q) * w
        })
        .sum::<f64>()
        .powf(1.0 / q);
    Ok(MollifiedCoefficient {
        b,
        kernel_width,
        order,
        q,
        achieved,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroRhoRow {
    pub rho: f64,
    /// `‖∇χ^ρ − ∇χ^B‖`
    pub to_smoothed: f64,
    /// `‖∇χ^ρ − ∇χ^0‖`
    pub to_classical: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroRhoReport {
    /// `ϰ = ‖A − B‖_{L^q}`
    pub kappa: f64,
    /// `‖χ^B‖_{H²}` summed in quadrature over `j`
    pub smoothed_h2: f64,
    /// `‖∇χ^0 − ∇χ^B‖`
    pub classical_to_smoothed: f64,
    pub rows: Vec<ZeroRhoRow>,
    /// `max_ρ ‖∇χ^ρ − ∇χ^B‖ / (ρ‖χ^B‖_{H²} + ϰ)`
    pub fitted_c_rho: f64,
    /// `‖∇χ^0 − ∇χ^B‖ / ϰ` (0 when `ϰ = 0`)
    pub fitted_c_zero: f64,
}

/// Compare `χ^ρ`, `χ^0` and the smoothed-coefficient corrector `χ^B` as `ρ → 0`.
/// `smoothing = None` uses `B = A` (appropriate for smooth `A`, `ϰ = 0`).
pub fn zero_rho_consistency(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho_list: &[f64],
    smoothing: Option<(f64, f64)>,
) -> Result<ZeroRhoReport> {
    let (b, kappa) = match smoothing {
        Some((w, q)) => {
            let m = mollify(a, w, q)?;
            (m.b, m.achieved)
        }
        None => (a.clone(), 0.0),
    };
    let chi_b = solve_cell(&b, basis, 0.0)?;
    let chi_0 = solve_cell(a, basis, 0.0)?;
    let smoothed_h2 = chi_b
        .chi
        .iter()
        .map(|c| basis.sobolev_norm(c, 2.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let classical_to_smoothed = corrector_gradient_distance(&chi_0, &chi_b);
    let mut rows = Vec::with_capacity(rho_list.len());
    let mut fitted_c_rho: f64 = 0.0;
    for &rho in rho_list {
        let chi_r = solve_cell(a, basis, rho)?;
        let to_smoothed = corrector_gradient_distance(&chi_r, &chi_b);
        let denom = rho * smoothed_h2 + kappa;
        if denom > 0.0 {
            fitted_c_rho = fitted_c_rho.max(to_smoothed / denom);
        }
        rows.push(ZeroRhoRow {
            rho,
            to_smoothed,
            to_classical: corrector_gradient_distance(&chi_r, &chi_0),
        });
    }
    Ok(ZeroRhoReport {
        kappa,
        smoothed_h2,
        classical_to_smoothed,
        rows,
        fitted_c_rho,
        fitted_c_zero: if kappa > 0.0 { classical_to_smoothed / kappa } else { 0.0 },
    })
}

/// CSV `j, n_1..n_d, re, im` over all correctors and basis modes.
pub fn write_corrector_csv(set: &CorrectorSet, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let d = set.basis.dim();
    let mut header = vec!["j".to_string()];
    header.extend((1..=d).map(|a| format!("n_{a}")));
    header.extend(["re", "im"].map(String::from));
    wtr.write_record(&header)?;
    for (j, c) in set.chi.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            let mut rec = vec![(j + 1).to_string()];
            rec.extend(set.basis.wavevector(i).iter().map(|k| k.to_string()));
            rec.push(v.re.to_string());
            rec.push(v.im.to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{load_coefficient, CoefficientDescription};

    fn laminate(n: usize) -> PeriodicCoefficient {
        load_coefficient(&CoefficientDescription::laminate([1.0, 4.0], 0.5, n)).unwrap()
    }

    #[test]
    fn constant_coefficient_has_zero_correctors() {
        let a = PeriodicCoefficient::constant(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let b = PlaneWaveBasis::new(2, 3).unwrap();
        for rho in [0.0, 1.0, 5.0] {
            let s = solve_cell(&a, &b, rho).unwrap();
            assert!(s.chi.iter().flatten().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn correctors_are_zero_mean_and_solve_weak_form() {
        let a = laminate(129);
        let b = PlaneWaveBasis::new(1, 32).unwrap();
        for rho in [0.0, 1.0, 16.0] {
            let s = solve_cell(&a, &b, rho).unwrap();
            assert_eq!(s.chi[0][0], czero());
            assert!(s.weak_residual < WEAK_RESIDUAL_TOL, "{}", s.weak_residual);
        }
    }

    #[test]
    fn mollifier_preserves_constants_and_ellipticity() {
        let a = PeriodicCoefficient::constant(1, &[3.0]).unwrap();
        let m = mollify(&a, 0.5, 2.0).unwrap();
        assert!((m.b.sample(0)[0] - 3.0).abs() < 1e-14);
        assert!(m.achieved < 1e-13);
        let a = laminate(129);
        let m = mollify(&a, 0.3, 2.0).unwrap();
        assert!(m.b.alpha() >= a.alpha() - 1e-12);
        assert!(m.b.upper() <= a.upper() + 1e-12);
    }

    #[test]
    fn mollifier_distance_shrinks_with_width() {
        let a = laminate(513);
        let widths = [0.8, 0.4, 0.2, 0.1];
        let d: Vec<f64> = widths.iter().map(|&w| mollify(&a, w, 2.0).unwrap().achieved).collect();
        assert!(d.windows(2).all(|p| p[1] < p[0]), "{d:?}");
    }
}

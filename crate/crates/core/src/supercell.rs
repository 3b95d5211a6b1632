//! ε-scale Bloch decomposition on a periodic supercell.
//!
//! The supercell is `[0, 2πεM)^d`, holding `M` copies of `εY` per axis. Its
//! Fourier modes `e^{ik·x/(εM)}` split uniquely as `k = Mn + q` with `q` in
//! the centered range `{−⌊M/2⌋, …, ⌈M/2⌉−1}^d` and `n` a fiber wavevector, so
//! fiber `q` carries quasimomentum `η_q = q/M` and `ξ_q = η_q/ε`. With the
//! fiber basis `|n|_∞ ≤ N` the supercell grid has `L = M(2N+1)` points per
//! axis and the decomposition is a finite unitary change of basis.
//!
//! Coefficients use the supercell mean convention `ĝ_k = |S|^{-1}∫_S g e^{−ik·x/(εM)}`:
//!
//! ```text
//! b_{m,q} = ∫_S g e^{−ix·ξ_q} conj(φ_m^{κ,ε}(x; ξ_q)) dx = |S| Σ_n conj(c_{m,n}) ĝ_{Mn+q}
//! ĝ_{Mn+q} = w Σ_m b_{m,q} c_{m,n},        w = (εM)^{-d}
//! ```
//!
//! where `c_m` are the L²(Y)-normalized fiber eigenvectors at `ρ = κ/ε`, and
//! `w` is the `ξ`-cell volume, so `w Σ|b|² = ‖g‖²_{L²(S)}`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::{assemble_fiber, PlaneWaveBasis};
use crate::linalg::{loglog_slope, smooth_odd};
use crate::spectra::{solve_fiber, FiberSpectrum};
use crate::tensor::{regime_tensor, HomogenizedTensor, Regime};
use crate::torus::{fft_nd, PeriodicCoefficient};

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Tolerance on the finite Parseval, Plancherel and inversion identities.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Coefficients below this fraction of the largest are skipped in relative checks.
pub const COEFFICIENT_FLOOR: f64 = 1e-10;

/// A supercell of `M^d` copies of `εY` with perturbation `κ`.
#[derive(Debug, Clone)]
pub struct SupercellProblem {
    pub coefficient: PeriodicCoefficient,
    pub basis: PlaneWaveBasis,
    pub epsilon: f64,
    pub cells: usize,
    pub kappa: f64,
    /// Supercell grid index for fiber `f`, basis index `i`.
    layout: Vec<Vec<usize>>,
}

impl SupercellProblem {
    pub fn new(
        coefficient: PeriodicCoefficient,
        basis: PlaneWaveBasis,
        epsilon: f64,
        cells: usize,
        kappa: f64,
    ) -> Result<Self> {
        if coefficient.dim() != basis.dim() {
            return Err(Error::BadDimension(format!(
                "coefficient is {}-dimensional, basis {}-dimensional",
                coefficient.dim(),
                basis.dim()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) || cells == 0 {
            return Err(Error::BadGrid(format!(
                "need epsilon > 0 and at least one cell, got epsilon = {epsilon}, M = {cells}"
            )));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::BadDescription(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        let mut p = Self {
            coefficient,
            basis,
            epsilon,
            cells,
            kappa,
            layout: Vec::new(),
        };
        p.layout = (0..p.fiber_count())
            .map(|f| {
                let q = p.fiber_offset(f);
                (0..p.basis.size())
                    .map(|i| {
                        let k: Vec<i64> = p
                            .basis
                            .wavevector(i)
                            .iter()
                            .zip(&q)
                            .map(|(n, q)| p.cells as i64 * n + q)
                            .collect();
                        p.grid_index(&k)
                    })
                    .collect()
            })
            .collect();
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn rho(&self) -> f64 {
        self.kappa / self.epsilon
    }

    /// `2πεM`.
    pub fn side(&self) -> f64 {
        2.0 * PI * self.epsilon * self.cells as f64
    }

    /// `|S|`.
    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim() as i32)
    }

    /// `(εM)^{-d}`, the `ξ`-cell volume.
    pub fn weight(&self) -> f64 {
        (self.epsilon * self.cells as f64).powi(-(self.dim() as i32))
    }

    /// `L = M(2N+1)`.
    pub fn points_per_axis(&self) -> usize {
        self.cells * (2 * self.basis.cutoff() + 1)
    }

    pub fn len(&self) -> usize {
        self.points_per_axis().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fiber_count(&self) -> usize {
        self.cells.pow(self.dim() as u32)
    }

    /// `q` of fiber `f` (axis 0 fastest).
    pub fn fiber_offset(&self, mut f: usize) -> Vec<i64> {
        let m = self.cells;
        (0..self.dim())
            .map(|_| {
                let r = f % m;
                f /= m;
                r as i64 - (m / 2) as i64
            })
            .collect()
    }

    /// `η_q = q/M`.
    pub fn eta(&self, f: usize) -> Vec<f64> {
        self.fiber_offset(f)
            .iter()
            .map(|&q| q as f64 / self.cells as f64)
            .collect()
    }

    /// `ξ_q = η_q/ε`.
    pub fn xi(&self, f: usize) -> Vec<f64> {
        self.eta(f).iter().map(|e| e / self.epsilon).collect()
    }

    /// Supercell wavevector `k` of grid index `idx`.
    pub fn wavevector(&self, mut idx: usize) -> Vec<i64> {
        let l = self.points_per_axis();
        let kmax = (self.cells * self.basis.cutoff() + self.cells.div_ceil(2)) as i64 - 1;
        (0..self.dim())
            .map(|_| {
                let i = (idx % l) as i64;
                idx /= l;
                if i <= kmax {
                    i
                } else {
                    i - l as i64
                }
            })
            .collect()
    }

    fn grid_index(&self, k: &[i64]) -> usize {
        let l = self.points_per_axis() as i64;
        k.iter()
            .rev()
            .fold(0usize, |acc, &v| acc * l as usize + v.rem_euclid(l) as usize)
    }

    /// Grid point `x_p`.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let l = self.points_per_axis();
        let h = self.side() / l as f64;
        (0..self.dim())
            .map(|_| {
                let i = idx % l;
                idx /= l;
                h * i as f64
            })
            .collect()
    }

    pub fn sample(&self, g: impl Fn(&[f64]) -> Complex64 + Sync) -> Vec<Complex64> {
        (0..self.len()).into_par_iter().map(|p| g(&self.point(p))).collect()
    }

    /// Grid values to `ĝ_k` (grid order).
    pub fn forward(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let mut data = values.to_vec();
        fft_nd(self.points_per_axis(), self.dim(), &mut data, FftDirection::Forward);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
        Ok(data)
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        let mut data = coeffs.to_vec();
        fft_nd(self.points_per_axis(), self.dim(), &mut data, FftDirection::Inverse);
        Ok(data)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::IncommensurateGrid {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    /// `ĝ_{Mn+q}` over the fiber basis.
    pub fn fiber_slice(&self, coeffs: &[Complex64], f: usize) -> Vec<Complex64> {
        self.layout[f].iter().map(|&g| coeffs[g]).collect()
    }

    /// `‖g‖²_{L²(S)}` from coefficients.
    pub fn norm_sq(&self, coeffs: &[Complex64]) -> f64 {
        self.volume() * coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Eigenpairs at `η_q`, `ρ = κ/ε`, for the listed fibers.
    pub fn spectra(&self, fibers: &[usize], modes: usize) -> Result<Vec<FiberSpectrum>> {
        fibers
            .par_iter()
            .map(|&f| {
                let op = assemble_fiber(&self.coefficient, &self.basis, self.rho(), &self.eta(f))?;
                solve_fiber(&op, modes)
            })
            .collect()
    }

    /// `λ^{κ,ε}(ξ) = ε^{-2} λ^ρ(εξ)`.
    pub fn scale_eigenvalue(&self, lambda_rho: f64) -> f64 {
        lambda_rho / (self.epsilon * self.epsilon)
    }
}

/// `b_{m,q}` for the fibers in `fibers`.
#[derive(Debug, Clone)]
pub struct BlochCoefficients {
    pub modes: usize,
    pub fibers: Vec<usize>,
    /// `values[f][m]`
    pub values: Vec<Vec<Complex64>>,
    /// `λ_m^{κ,ε}(ξ_q)`, `lambdas[f][m]`
    pub lambdas: Vec<Vec<f64>>,
}

impl BlochCoefficients {
    /// `w Σ_{m,q} b_m(f) conj(b_m(g))`.
    pub fn inner(&self, other: &Self, weight: f64) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y.conj()))
            .sum();
        s * weight
    }
}

/// Eigen-decomposition of every fiber, reused across transforms.
#[derive(Debug, Clone)]
pub struct SupercellSpectra {
    pub fibers: Vec<usize>,
    pub spectra: Vec<FiberSpectrum>,
}

impl SupercellSpectra {
    pub fn compute(p: &SupercellProblem, fibers: Vec<usize>, modes: usize) -> Result<Self> {
        let spectra = p.spectra(&fibers, modes)?;
        Ok(Self { fibers, spectra })
    }

    pub fn all(p: &SupercellProblem, modes: usize) -> Result<Self> {
        Self::compute(p, (0..p.fiber_count()).collect(), modes)
    }

    pub fn modes(&self) -> usize {
        self.spectra.first().map_or(0, |s| s.eigenvalues.len())
    }
}

/// Transform from supercell Fourier coefficients.
pub fn bloch_coefficients(p: &SupercellProblem, sp: &SupercellSpectra, coeffs: &[Complex64]) -> BlochCoefficients {
    let vol = p.volume();
    let values = sp
        .fibers
        .iter()
        .zip(&sp.spectra)
        .map(|(&f, s)| {
            let slice = p.fiber_slice(coeffs, f);
            s.eigenvectors
                .iter()
                .map(|c| vol * c.iter().zip(&slice).map(|(a, g)| a.conj() * g).sum::<Complex64>())
                .collect()
        })
        .collect();
    BlochCoefficients {
        modes: sp.modes(),
        fibers: sp.fibers.clone(),
        values,
        lambdas: sp
            .spectra
            .iter()
            .map(|s| s.eigenvalues.iter().map(|&l| p.scale_eigenvalue(l)).collect())
            .collect(),
    }
}

/// `b_{m,q}(g)` for the first `modes` Bloch modes of every fiber.
pub fn bloch_transform(p: &SupercellProblem, g: &[Complex64], modes: usize) -> Result<BlochCoefficients> {
    let sp = SupercellSpectra::all(p, modes)?;
    Ok(bloch_coefficients(p, &sp, &p.forward(g)?))
}

/// Supercell Fourier coefficients rebuilt from `b`.
pub fn inverse_bloch_coefficients(
    p: &SupercellProblem,
    sp: &SupercellSpectra,
    b: &BlochCoefficients,
) -> Vec<Complex64> {
    let w = p.weight();
    let mut out = vec![czero(); p.len()];
    for ((&f, s), bf) in sp.fibers.iter().zip(&sp.spectra).zip(&b.values) {
        for (i, &g) in p.layout[f].iter().enumerate() {
            out[g] = w * s
                .eigenvectors
                .iter()
                .zip(bf)
                .map(|(c, bm)| bm * c[i])
                .sum::<Complex64>();
        }
    }
    out
}

/// Grid values rebuilt from `b`.
pub fn inverse_bloch_transform(
    p: &SupercellProblem,
    sp: &SupercellSpectra,
    b: &BlochCoefficients,
) -> Result<Vec<Complex64>> {
    p.inverse(&inverse_bloch_coefficients(p, sp, b))
}

/// Relative defects of the finite identities.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub parseval: f64,
    pub plancherel: f64,
    pub inversion: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.parseval.max(self.plancherel).max(self.inversion)
    }
}

/// Parseval on `f`, Plancherel on `(f, g)`, inversion on `f`, with every mode.
pub fn identity_check(p: &SupercellProblem, f: &[Complex64], g: &[Complex64]) -> Result<IdentityReport> {
    let sp = SupercellSpectra::all(p, p.basis.size())?;
    let fh = p.forward(f)?;
    let gh = p.forward(g)?;
    let bf = bloch_coefficients(p, &sp, &fh);
    let bg = bloch_coefficients(p, &sp, &gh);
    let w = p.weight();
    let nf = p.norm_sq(&fh);
    let parseval = (bf.inner(&bf, w).re - nf).abs() / nf;
    let direct: Complex64 = p.volume() * fh.iter().zip(&gh).map(|(a, b)| a * b.conj()).sum::<Complex64>();
    let scale = (nf * p.norm_sq(&gh)).sqrt();
    let plancherel = (bf.inner(&bg, w) - direct).norm() / scale;
    let back = inverse_bloch_transform(p, &sp, &bf)?;
    let err: f64 = back.iter().zip(f).map(|(a, b)| (a - b).norm_sqr()).sum();
    let base: f64 = f.iter().map(|c| c.norm_sqr()).sum();
    Ok(IdentityReport {
        parseval,
        plancherel,
        inversion: (err / base).sqrt(),
    })
}

/// `κ²Δ²u − div(A(x/ε)∇u)` projected on the supercell modes, computed
/// pseudo-spectrally on a padded grid so the product `A∇u` is alias-free.
pub fn apply_operator(p: &SupercellProblem, u_coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    p.check_len(u_coeffs.len())?;
    let d = p.dim();
    let m = p.cells as i64;
    let band = p.coefficient.grid().half_width();
    let l = p.points_per_axis();
    let pad = smooth_odd(l + p.cells * band + 1);
    let total = pad.pow(d as u32);
    let to_pad = |k: &[i64]| {
        k.iter()
            .rev()
            .fold(0usize, |acc, &v| acc * pad + v.rem_euclid(pad as i64) as usize)
    };
    let scale = 1.0 / (p.epsilon * p.cells as f64);
    let waves: Vec<Vec<i64>> = (0..p.len()).map(|i| p.wavevector(i)).collect();
    // Coefficient values on the padded grid: mode j of A sits at k = Mj.
    let cgrid = p.coefficient.grid();
    let mut a_vals = Vec::with_capacity(d * d);
    for j in 0..d {
        for c in 0..d {
            let mut data = vec![czero(); total];
            for (idx, &v) in p.coefficient.fourier_component(j, c).iter().enumerate() {
                let k: Vec<i64> = cgrid.wavenumber(idx).iter().map(|x| x * m).collect();
                data[to_pad(&k)] = v;
            }
            fft_nd(pad, d, &mut data, FftDirection::Inverse);
            a_vals.push(data);
        }
    }
    let grads: Vec<Vec<Complex64>> = (0..d)
        .map(|c| {
            let mut data = vec![czero(); total];
            for (k, u) in waves.iter().zip(u_coeffs) {
                data[to_pad(k)] = u * Complex64::new(0.0, k[c] as f64 * scale);
            }
            fft_nd(pad, d, &mut data, FftDirection::Inverse);
            data
        })
        .collect();
    let inv_total = 1.0 / total as f64;
    let fluxes: Vec<Vec<Complex64>> = (0..d)
        .map(|j| {
            let mut data: Vec<Complex64> = (0..total)
                .map(|x| (0..d).map(|c| a_vals[j * d + c][x] * grads[c][x]).sum())
                .collect();
            fft_nd(pad, d, &mut data, FftDirection::Forward);
            data.iter_mut().for_each(|v| *v *= inv_total);
            data
        })
        .collect();
    let k2 = p.kappa * p.kappa;
    Ok(waves
        .iter()
        .zip(u_coeffs)
        .map(|(k, u)| {
            let pos = to_pad(k);
            let div: Complex64 = (0..d)
                .map(|j| fluxes[j][pos] * Complex64::new(0.0, k[j] as f64 * scale))
                .sum();
            let w2: f64 = k.iter().map(|v| (*v as f64 * scale).powi(2)).sum();
            u * (k2 * w2 * w2) - div
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagonalizationReport {
    /// `max |b(𝒜u) − λ b(u)| / |λ b(u)|` over coefficients above the floor.
    pub max_relative: f64,
    pub checked: usize,
}

/// `b_{m,q}(𝒜u) = λ_m^{κ,ε}(ξ_q) b_{m,q}(u)` for grid values `u`.
pub fn diagonalization_check(p: &SupercellProblem, u: &[Complex64]) -> Result<DiagonalizationReport> {
    let sp = SupercellSpectra::all(p, p.basis.size())?;
    let uh = p.forward(u)?;
    let au = apply_operator(p, &uh)?;
    let bu = bloch_coefficients(p, &sp, &uh);
    let bau = bloch_coefficients(p, &sp, &au);
    let mut top: f64 = 0.0;
    for (bf, lf) in bu.values.iter().zip(&bu.lambdas) {
        for (b, l) in bf.iter().zip(lf) {
            top = top.max((b * l).norm());
        }
    }
    let mut max_relative: f64 = 0.0;
    let mut checked = 0;
    for ((bf, af), lf) in bu.values.iter().zip(&bau.values).zip(&bu.lambdas) {
        for ((b, a), l) in bf.iter().zip(af).zip(lf) {
            let expect = b * l;
            if expect.norm() > COEFFICIENT_FLOOR * top {
                checked += 1;
                max_relative = max_relative.max((a - expect).norm() / expect.norm());
            }
        }
    }
    Ok(DiagonalizationReport { max_relative, checked })
}

/// Random smooth function with Gaussian spectral decay on the scale `width` (in `k`).
pub fn smooth_random_function(p: &SupercellProblem, width: f64, seed: u64) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<Complex64> = (0..p.len())
        .map(|i| {
            let k2: f64 = p.wavevector(i).iter().map(|v| (*v * *v) as f64).sum();
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            z * (-0.5 * k2 / (width * width)).exp()
        })
        .collect();
    p.inverse(&coeffs)
}

/// How `κ` follows `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaLaw {
    /// `κ = ε²`, so `ρ = ε → 0`.
    EpsSquared,
    /// `κ = θε`.
    Linear(f64),
    /// `κ = ε^{1/2}`, so `ρ = ε^{-1/2} → ∞`.
    SqrtEps,
    /// One `κ` per entry of the ε list.
    Explicit(Vec<f64>),
}

impl KappaLaw {
    /// The natural law of a regime.
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::Zero => Self::EpsSquared,
            Regime::Theta(t) => Self::Linear(t),
            Regime::Infinity => Self::SqrtEps,
        }
    }

    pub fn kappas(&self, eps_list: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Self::EpsSquared => eps_list.iter().map(|e| e * e).collect(),
            Self::Linear(t) => eps_list.iter().map(|e| t * e).collect(),
            Self::SqrtEps => eps_list.iter().map(|e| e.sqrt()).collect(),
            Self::Explicit(k) => {
                if k.len() != eps_list.len() {
                    return Err(Error::BadDescription(format!(
                        "{} kappa values for {} epsilons",
                        k.len(),
                        eps_list.len()
                    )));
                }
                k.clone()
            }
        })
    }
}

/// Check that `ρ = κ/ε` moves as the regime demands when `ε` decreases.
pub fn check_regime(regime: Regime, eps_list: &[f64], kappas: &[f64]) -> Result<()> {
    let mut pairs: Vec<(f64, f64)> = eps_list
        .iter()
        .zip(kappas)
        .map(|(e, k)| (*e, k / e))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rhos: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ok = match regime {
        Regime::Zero => rhos.windows(2).all(|w| w[1] < w[0]),
        Regime::Infinity => rhos.windows(2).all(|w| w[1] > w[0]),
        Regime::Theta(t) => rhos.iter().all(|r| (r - t).abs() <= 1e-12 * t.abs().max(1.0)),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::RegimeMismatch(format!(
            "rho = kappa/epsilon takes values {rhos:?} as epsilon decreases, inconsistent with regime {regime}"
        )))
    }
}

/// Zero-mean trigonometric forcing on `[0, 2π)^d`: `f(x) = Σ f_k e^{ik·x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigForcing {
    pub modes: Vec<ForcingMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingMode {
    pub k: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl TrigForcing {
    /// `cos x_1 + ½ sin 2x_1`-style real forcing from `(k, amplitude)` cosine
    /// pairs; each entry adds `amp cos(k·x)`.
    pub fn cosines(dim: usize, terms: &[(Vec<i64>, f64)]) -> Self {
        let mut modes = Vec::new();
        for (k, amp) in terms {
            assert_eq!(k.len(), dim);
            let neg: Vec<i64> = k.iter().map(|v| -v).collect();
            modes.push(ForcingMode { k: k.clone(), re: 0.5 * amp, im: 0.0 });
            modes.push(ForcingMode { k: neg, re: 0.5 * amp, im: 0.0 });
        }
        Self { modes }
    }

    pub fn dim(&self) -> usize {
        self.modes.first().map_or(0, |m| m.k.len())
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.modes.iter().any(|m| m.k.len() != d) {
            return Err(Error::BadDescription("forcing modes must share one dimension".into()));
        }
        if self.modes.iter().any(|m| m.k.iter().all(|&v| v == 0) && (m.re != 0.0 || m.im != 0.0)) {
            return Err(Error::BadDescription("forcing must have zero mean".into()));
        }
        Ok(())
    }
}

/// One row of a convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub kappa: f64,
    pub regime: String,
    pub l2_error: f64,
    pub flux_weak_error: f64,
    pub higher_mode_norm: f64,
    /// `‖u^ε − u*‖/‖u*‖` with the contrast tensor, when one is given.
    pub contrast_l2_error: Option<f64>,
    /// `⟨𝒜u, u⟩ = w Σ λ|b(u)|²`.
    pub energy: f64,
    /// `|⟨f, u⟩ − w Σ λ|b(u)|²| / |⟨f, u⟩|`.
    pub energy_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub regime: Regime,
    pub tensor: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// Log-log slope of `higher_mode_norm` against `ε`.
    pub higher_mode_slope: f64,
}

impl ConvergenceTable {
    pub fn l2_strictly_decreasing(&self) -> bool {
        let mut rows: Vec<&ConvergenceRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        rows.windows(2).all(|w| w[1].l2_error < w[0].l2_error)
    }
}

/// Fiberwise solution of `𝒜^{κ,ε}u = f` on one supercell.
#[derive(Debug, Clone)]
pub struct SupercellSolution {
    /// Supercell Fourier coefficients of `u^ε`.
    pub coeffs: Vec<Complex64>,
    /// `b_{m,q}(u)` on the fibers carrying forcing.
    pub bloch: BlochCoefficients,
    pub spectra: SupercellSpectra,
    /// `‖Σ_{m≥2} b_m(u)…‖_{L²}`.
    pub higher_mode_norm: f64,
    pub energy: f64,
    pub energy_defect: f64,
}

/// Solve by Bloch diagonalization with the `(m = 1, q = 0)` mode removed.
pub fn solve_supercell(p: &SupercellProblem, f_coeffs: &[Complex64]) -> Result<SupercellSolution> {
    p.check_len(f_coeffs.len())?;
    let fibers: Vec<usize> = (0..p.fiber_count())
        .filter(|&f| p.fiber_slice(f_coeffs, f).iter().any(|c| c.norm() > 0.0))
        .collect();
    let spectra = SupercellSpectra::compute(p, fibers, p.basis.size())?;
    let bf = bloch_coefficients(p, &spectra, f_coeffs);
    let mut bu = bf.clone();
    for ((&fib, vals), lams) in bu.fibers.iter().zip(bu.values.iter_mut()).zip(&bf.lambdas) {
        let at_zero = p.fiber_offset(fib).iter().all(|&q| q == 0);
        for (m, (v, l)) in vals.iter_mut().zip(lams).enumerate() {
            *v = if at_zero && m == 0 { czero() } else { *v / l };
        }
    }
    let coeffs = inverse_bloch_coefficients(p, &spectra, &bu);
    let w = p.weight();
    let higher: f64 = bu.values.iter().flat_map(|v| v.iter().skip(1)).map(|c| c.norm_sqr()).sum();
    let energy: f64 = w * bu
        .values
        .iter()
        .zip(&bu.lambdas)
        .flat_map(|(v, l)| v.iter().zip(l).map(|(c, l)| l * c.norm_sqr()))
        .sum::<f64>();
    let direct: Complex64 = p.volume() * f_coeffs.iter().zip(&coeffs).map(|(a, b)| a * b.conj()).sum::<Complex64>();
    Ok(SupercellSolution {
        coeffs,
        bloch: bu,
        spectra,
        higher_mode_norm: (w * higher).sqrt(),
        energy,
        energy_defect: (direct.re - energy).abs().max(direct.im.abs()) / direct.norm().max(f64::MIN_POSITIVE),
    })
}

/// `b_{m,q}(u)` restricted to modes `m ≥ 2`, as an L² norm.
pub fn higher_mode_energy(sol: &SupercellSolution) -> f64 {
    sol.higher_mode_norm
}

/// Supercell flux coefficients `A(x/ε)∇u`, projected on the fiber modes.
fn flux_coefficients(p: &SupercellProblem, sol: &SupercellSolution) -> Vec<Vec<Complex64>> {
    let d = p.dim();
    let mut out = vec![vec![czero(); p.len()]; d];
    let inv_eps = 1.0 / p.epsilon;
    let a = &p.coefficient;
    let size = p.basis.size();
    let mut diff = vec![0i64; d];
    for &f in &sol.spectra.fibers {
        let u = p.fiber_slice(&sol.coeffs, f);
        let eta = p.eta(f);
        for i in 0..size {
            let m = p.basis.wavevector(i);
            for j in 0..d {
                let mut s = czero();
                for (jj, un) in u.iter().enumerate() {
                    if un.norm_sqr() == 0.0 {
                        continue;
                    }
                    let n = p.basis.wavevector(jj);
                    for c in 0..d {
                        diff[c] = m[c] - n[c];
                    }
                    for c in 0..d {
                        let grad = Complex64::new(0.0, (n[c] as f64 + eta[c]) * inv_eps);
                        s += a.fourier_entry(j, c, &diff) * grad * un;
                    }
                }
                out[j][p.layout[f][i]] = s;
            }
        }
    }
    out
}

/// `u*` by Fourier division: `û*_k = f̂_k / (ξ_k·A^hom ξ_k)`.
pub fn homogenized_solution(p: &SupercellProblem, f_coeffs: &[Complex64], tensor: &[f64]) -> Vec<Complex64> {
    let d = p.dim();
    let scale = 1.0 / (p.epsilon * p.cells as f64);
    f_coeffs
        .iter()
        .enumerate()
        .map(|(i, fk)| {
            if fk.norm() == 0.0 {
                return czero();
            }
            let xi: Vec<f64> = p.wavevector(i).iter().map(|&k| k as f64 * scale).collect();
            let mut q = 0.0;
            for j in 0..d {
                for c in 0..d {
                    q += xi[j] * tensor[j * d + c] * xi[c];
                }
            }
            fk / q
        })
        .collect()
}

fn relative_l2(p: &SupercellProblem, u: &[Complex64], v: &[Complex64]) -> f64 {
    let diff: Vec<Complex64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    (p.norm_sq(&diff) / p.norm_sq(v)).sqrt()
}

/// Homogenization experiment on the fixed domain `[0, 2π)^d` (`M = 1/ε`).
pub fn homogenization_experiment(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    forcing: &TrigForcing,
    regime: Regime,
    kappa: &KappaLaw,
    eps_list: &[f64],
    contrast: Option<&HomogenizedTensor>,
) -> Result<ConvergenceTable> {
    forcing.validate()?;
    if forcing.dim() != a.dim() {
        return Err(Error::BadDimension("forcing and coefficient dimensions differ".into()));
    }
    let kappas = kappa.kappas(eps_list)?;
    check_regime(regime, eps_list, &kappas)?;
    let tensor = regime_tensor(a, basis, regime)?;
    let d = a.dim();
    let rows: Vec<ConvergenceRow> = eps_list
        .iter()
        .zip(&kappas)
        .map(|(&eps, &kap)| {
            let cells = (1.0 / eps).round() as usize;
            if cells == 0 || (cells as f64 * eps - 1.0).abs() > 1e-12 {
                return Err(Error::BadGrid(format!("1/epsilon must be an integer, got epsilon = {eps}")));
            }
            let p = SupercellProblem::new(a.clone(), basis.clone(), eps, cells, kap)?;
            let mut fh = vec![czero(); p.len()];
            for mode in &forcing.modes {
                if mode.k.iter().any(|k| k.unsigned_abs() as usize * 2 >= p.points_per_axis()) {
                    return Err(Error::BadGrid(format!("forcing mode {:?} not resolved", mode.k)));
                }
                fh[p.grid_index(&mode.k)] += Complex64::new(mode.re, mode.im);
            }
            let sol = solve_supercell(&p, &fh)?;
            let ustar = homogenized_solution(&p, &fh, &tensor.matrix);
            let l2_error = relative_l2(&p, &sol.coeffs, &ustar);
            let contrast_l2_error =
                contrast.map(|t| relative_l2(&p, &sol.coeffs, &homogenized_solution(&p, &fh, &t.matrix)));
            // Weak flux error in the (1+|ξ|²)^{-1/2}-weighted norm.
            let flux = flux_coefficients(&p, &sol);
            let scale = 1.0 / (eps * cells as f64);
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..p.len() {
                let xi: Vec<f64> = p.wavevector(i).iter().map(|&k| k as f64 * scale).collect();
                let w = 1.0 / (1.0 + xi.iter().map(|x| x * x).sum::<f64>());
                for j in 0..d {
                    let star: Complex64 = (0..d)
                        .map(|c| tensor.matrix[j * d + c] * Complex64::new(0.0, xi[c]) * ustar[i])
                        .sum();
                    num += w * (flux[j][i] - star).norm_sqr();
                    den += w * star.norm_sqr();
                }
            }
            Ok(ConvergenceRow {
                epsilon: eps,
                kappa: kap,
                regime: regime.to_string(),
                l2_error,
                flux_weak_error: (num / den).sqrt(),
                higher_mode_norm: sol.higher_mode_norm,
                contrast_l2_error,
                energy: sol.energy,
                energy_defect: sol.energy_defect,
            })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.higher_mode_norm > 0.0)
        .map(|r| (r.epsilon, r.higher_mode_norm))
        .unzip();
    let higher_mode_slope = if xs.len() >= 2 { loglog_slope(&xs, &ys) } else { f64::NAN };
    Ok(ConvergenceTable {
        regime,
        tensor: tensor.matrix,
        rows,
        higher_mode_slope,
    })
}

/// CSV `epsilon, kappa, regime, l2_error, flux_weak_error, higher_mode_norm`.
pub fn write_convergence_csv(table: &ConvergenceTable, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["epsilon", "kappa", "regime", "l2_error", "flux_weak_error", "higher_mode_norm"])?;
    for r in &table.rows {
        wtr.write_record([
            r.epsilon.to_string(),
            r.kappa.to_string(),
            r.regime.clone(),
            r.l2_error.to_string(),
            r.flux_weak_error.to_string(),
            r.higher_mode_norm.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Gaussian bump `Π exp(−(x_a − c)²/(2σ²))`, optionally modulated as
/// `g^ε = g·(1 + β cos(x_1/ε))`, a sequence converging weakly to `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianProfile {
    pub sigma: f64,
    #[serde(default)]
    pub modulation: f64,
}

impl GaussianProfile {
    /// Unitary Fourier transform of the unmodulated bump centered at `center`.
    pub fn fourier(&self, xi: &[f64], center: f64) -> Complex64 {
        xi.iter()
            .map(|x| {
                Complex64::from_polar(self.sigma * (-0.5 * self.sigma * self.sigma * x * x).exp(), -x * center)
            })
            .product()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformLimitRow {
    pub epsilon: f64,
    pub kappa: f64,
    /// `max_{|ξ_q| ≤ window} |B₁g(ξ_q) − ĝ(ξ_q)|`.
    pub max_error: f64,
    /// Bump value at the supercell boundary relative to its peak.
    pub boundary_tail: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformLimitReport {
    pub regime: Regime,
    pub rows: Vec<TransformLimitRow>,
    pub slope: f64,
}

/// Compare `B₁^{κ,ε}g` with `ĝ` on `|ξ| ≤ window` over a fixed domain of side `2π·span`.
#[allow(clippy::too_many_arguments)]
pub fn transform_to_fourier_limit(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    g: &GaussianProfile,
    regime: Regime,
    kappa: &KappaLaw,
    eps_list: &[f64],
    span: usize,
    window: f64,
) -> Result<TransformLimitReport> {
    let kappas = kappa.kappas(eps_list)?;
    check_regime(regime, eps_list, &kappas)?;
    let center = PI * span as f64;
    let rows: Vec<TransformLimitRow> = eps_list
        .iter()
        .zip(&kappas)
        .map(|(&eps, &kap)| {
            let cells = (span as f64 / eps).round() as usize;
            if (cells as f64 * eps - span as f64).abs() > 1e-9 {
                return Err(Error::BadGrid(format!("span/epsilon must be an integer, got epsilon = {eps}")));
            }
            let p = SupercellProblem::new(a.clone(), basis.clone(), eps, cells, kap)?;
            let s2 = g.sigma * g.sigma;
            let beta = g.modulation;
            let values = p.sample(|x| {
                let bump: f64 = x.iter().map(|v| (-(v - center).powi(2) / (2.0 * s2)).exp()).product();
                Complex64::new(bump * (1.0 + beta * (x[0] / eps).cos()), 0.0)
            });
            let coeffs = p.forward(&values)?;
            let fibers: Vec<usize> = (0..p.fiber_count())
                .filter(|&f| p.xi(f).iter().map(|x| x * x).sum::<f64>().sqrt() <= window)
                .collect();
            let sp = SupercellSpectra::compute(&p, fibers, 1)?;
            let b = bloch_coefficients(&p, &sp, &coeffs);
            let max_error = sp
                .fibers
                .iter()
                .zip(&b.values)
                .map(|(&f, v)| (v[0] - g.fourier(&p.xi(f), center)).norm())
                .fold(0.0, f64::max);
            let boundary_tail = (-(center * center) / (2.0 * s2)).exp();
            Ok(TransformLimitRow {
                epsilon: eps,
                kappa: kap,
                max_error,
                boundary_tail,
            })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.epsilon, r.max_error)).unzip();
    Ok(TransformLimitReport {
        regime,
        slope: loglog_slope(&xs, &ys),
        rows,
    })
}

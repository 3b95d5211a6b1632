//! Plane-wave Galerkin matrices of the shifted form
//!
//! ```text
//! a^ρ[η](u, v) = ∫_Y ρ² (∇+iη)²u · conj((∇+iη)²v) + A(∇+iη)u · conj((∇+iη)v)
//! ```
//!
//! On the basis `e_n(y) = e^{i n·y}`, `|n|_∞ ≤ N`, and with the form divided
//! by `|Y|`, the matrix entries are
//!
//! ```text
//! K_{mn}(η) = (m+η)·Â(m−n)(n+η) + ρ² δ_{mn} |n+η|⁴ .
//! ```
//!
//! The biharmonic diagonal is kept apart from the coefficient part so that
//! quadratic forms can be evaluated as sums of nonnegative terms; this matters
//! once `ρ² N⁴` dwarfs the low eigenvalues.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, Ordering};

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::torus::{PeriodicCoefficient, PeriodicFunction, TorusGrid};

/// Slack below which a Gårding trial counts as a violation.
pub const GARDING_TOL: f64 = 1e-9;

/// Plane waves `e^{i n·y}` with `|n|_∞ ≤ N`.
///
/// Enumeration order: by shell `|n|_∞`, lexicographic in `(n_1, …, n_d)`
/// within a shell. The constant mode is always index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneWaveBasis {
    grid: TorusGrid,
    cutoff: usize,
    indices: Vec<i64>,
    lookup: Vec<usize>,
}

impl PlaneWaveBasis {
    pub fn new(dim: usize, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::BadGrid("basis cutoff N must be at least 1".into()));
        }
        let grid = TorusGrid::with_half_width(dim, cutoff)?;
        let mut vecs: Vec<Vec<i64>> = (0..grid.len()).map(|i| grid.wavenumber(i)).collect();
        vecs.sort_by(|a, b| {
            let sa = a.iter().map(|v| v.abs()).max();
            let sb = b.iter().map(|v| v.abs()).max();
            sa.cmp(&sb).then_with(|| a.cmp(b))
        });
        let mut lookup = vec![0; grid.len()];
        for (bi, v) in vecs.iter().enumerate() {
            lookup[grid.index_of_wavenumber(v).expect("resolved by construction")] = bi;
        }
        Ok(Self {
            grid,
            cutoff,
            indices: vecs.concat(),
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Truncation radius `N`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// `(2N+1)^d`.
    pub fn size(&self) -> usize {
        self.grid.len()
    }

    /// Grid with `2N+1` points per axis on which basis expansions are exact.
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn wavevector(&self, i: usize) -> &[i64] {
        let d = self.dim();
        &self.indices[i * d..(i + 1) * d]
    }

    pub fn index_of(&self, n: &[i64]) -> Option<usize> {
        self.grid.index_of_wavenumber(n).map(|g| self.lookup[g])
    }

    /// `|n|²` of basis vector `i`.
    pub fn norm_sq(&self, i: usize) -> f64 {
        self.wavevector(i).iter().map(|&v| (v * v) as f64).sum()
    }

    /// `n + η` of basis vector `i`.
    pub fn shifted(&self, i: usize, eta: &[f64]) -> Vec<f64> {
        self.wavevector(i)
            .iter()
            .zip(eta)
            .map(|(&n, &e)| n as f64 + e)
            .collect()
    }

    /// Periodic function with the given basis coefficients.
    pub fn to_function(&self, coeffs: &[Complex64]) -> PeriodicFunction {
        let mut dft = vec![Complex64::new(0.0, 0.0); self.size()];
        for (g, &bi) in self.lookup.iter().enumerate() {
            dft[g] = coeffs[bi];
        }
        PeriodicFunction::from_coeffs(self.grid.clone(), dft).expect("sizes agree")
    }

    /// Basis coefficients of `u` (modes outside the basis are dropped).
    pub fn project(&self, u: &PeriodicFunction) -> Vec<Complex64> {
        (0..self.size()).map(|i| u.coeff(self.wavevector(i))).collect()
    }

    /// `(2π)^d Σ w(n) |c_n|²`, the squared norm with spectral weight `w`.
    pub fn weighted_norm_sq(&self, coeffs: &[Complex64], w: impl Fn(usize) -> f64) -> f64 {
        let s: f64 = coeffs.iter().enumerate().map(|(i, c)| w(i) * c.norm_sqr()).sum();
        self.grid.cell_volume() * s
    }

    /// `‖u‖_{H^s}` under the crate convention.
    pub fn sobolev_norm(&self, coeffs: &[Complex64], s: f64) -> f64 {
        self.weighted_norm_sq(coeffs, |i| (1.0 + self.norm_sq(i)).powf(s))
            .sqrt()
    }
}

/// Gårding constant
/// `C* = α/2 + C₁C₂ + C₄ + 16ρ²` with `|η| ≤ η_max = √d/2`:
///
/// * `C₁ = 2‖A‖_∞ η_max` bounds the cross term `2|∫A∇u·ηū|`,
/// * `C₂ = 2C₁/α` is the Young weight leaving `(α/2)‖∇u‖²`,
/// * `C₄ = ‖A‖_∞ η_max²` bounds `∫Aη·η|u|²`,
/// * `16ρ²` absorbs the lower-order terms of `|(∇+iη)²u|²` against `ρ²‖Δu‖²/6`.
pub fn garding_constant(alpha: f64, upper: f64, rho: f64, dim: usize) -> f64 {
    let eta_max = (dim as f64).sqrt() / 2.0;
    let c1 = 2.0 * upper * eta_max;
    let c2 = 2.0 * c1 / alpha;
    let c4 = upper * eta_max * eta_max;
    alpha / 2.0 + c1 * c2 + c4 + 16.0 * rho * rho
}

static TRUNCATION_REPORTED: AtomicBool = AtomicBool::new(false);

/// Galerkin matrix of `a^ρ[η]`, split as coefficient part plus biharmonic diagonal.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    basis: PlaneWaveBasis,
    rho: f64,
    eta: Vec<f64>,
    quad: Mat<Complex64>,
    bih: Vec<f64>,
    garding_constant: f64,
    alpha: f64,
    truncated: bool,
}

/// Assemble `K(η)` for coefficient `a` on `basis`.
pub fn assemble_fiber(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    eta: &[f64],
) -> Result<FiberOperator> {
    let d = basis.dim();
    if a.dim() != d || eta.len() != d {
        return Err(Error::BadDimension(format!(
            "coefficient dim {}, basis dim {d}, eta dim {}",
            a.dim(),
            eta.len()
        )));
    }
    if eta.iter().any(|e| !e.is_finite() || e.abs() > 0.5) {
        return Err(Error::EtaOutOfCell { eta: eta.to_vec() });
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::BadDescription(format!("rho must be finite and >= 0, got {rho}")));
    }
    let band = a.bandwidth(1e-14);
    let truncated = band > 2 * basis.cutoff();
    // Sweeps assemble thousands of fibers; say it once per process.
    if truncated && !TRUNCATION_REPORTED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "coefficient bandwidth {band} exceeds 2N = {}; Galerkin matrix truncates it",
            2 * basis.cutoff()
        );
    }
    let size = basis.size();
    let shifted: Vec<Vec<f64>> = (0..size).map(|i| basis.shifted(i, eta)).collect();
    let cgrid = a.grid();
    let comps: Vec<&[Complex64]> = (0..d * d)
        .map(|e| a.fourier_component(e / d, e % d))
        .collect();
    let mut diff = vec![0i64; d];
    let quad = Mat::<Complex64>::from_fn(size, size, |i, j| {
        let (m, n) = (basis.wavevector(i), basis.wavevector(j));
        for a in 0..d {
            diff[a] = m[a] - n[a];
        }
        let Some(k) = cgrid.index_of_wavenumber(&diff) else {
            return Complex64::new(0.0, 0.0);
        };
        let mut s = Complex64::new(0.0, 0.0);
        for r in 0..d {
            for c in 0..d {
                s += comps[r * d + c][k] * (shifted[i][r] * shifted[j][c]);
            }
        }
        s
    });
    let bih = shifted
        .iter()
        .map(|s| {
            let q: f64 = s.iter().map(|v| v * v).sum();
            rho * rho * q * q
        })
        .collect();
    Ok(FiberOperator {
        basis: basis.clone(),
        rho,
        eta: eta.to_vec(),
        quad,
        bih,
        garding_constant: garding_constant(a.alpha(), a.upper(), rho, d),
        alpha: a.alpha(),
        truncated,
    })
}

impl FiberOperator {
    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn size(&self) -> usize {
        self.basis.size()
    }

    pub fn garding_constant(&self) -> f64 {
        self.garding_constant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// True when the coefficient has Fourier content beyond `2N`.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Coefficient part `(m+η)·Â(m−n)(n+η)`.
    pub fn coefficient_part(&self) -> &Mat<Complex64> {
        &self.quad
    }

    /// Biharmonic diagonal `ρ²|n+η|⁴`.
    pub fn biharmonic_diagonal(&self) -> &[f64] {
        &self.bih
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        let mut v = self.quad[(i, j)];
        if i == j {
            v += self.bih[i];
        }
        v
    }

    /// Full Hermitian matrix `K(η)`.
    pub fn matrix(&self) -> Mat<Complex64> {
        let mut m = self.quad.clone();
        for (i, b) in self.bih.iter().enumerate() {
            m[(i, i)] += *b;
        }
        m
    }

    /// `max |K_{ij} − conj(K_{ji})|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.size();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.quad[(i, j)] - self.quad[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `K v`.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.size();
        (0..n)
            .map(|i| {
                let mut s = Complex64::new(self.bih[i], 0.0) * v[i];
                for (j, vj) in v.iter().enumerate() {
                    s += self.quad[(i, j)] * vj;
                }
                s
            })
            .collect()
    }

    /// `v* K v`, with the biharmonic part summed separately as nonnegative terms.
    pub fn energy(&self, v: &[Complex64]) -> f64 {
        let n = self.size();
        let mut q = 0.0;
        for i in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for (j, vj) in v.iter().enumerate() {
                s += self.quad[(i, j)] * vj;
            }
            q += (v[i].conj() * s).re;
        }
        let b: f64 = v.iter().zip(&self.bih).map(|(c, b)| b * c.norm_sqr()).sum();
        q + b
    }

    /// `energy(v) / |v|²`.
    pub fn rayleigh_quotient(&self, v: &[Complex64]) -> f64 {
        let nrm: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        self.energy(v) / nrm
    }
}

/// Outcome of randomized Gårding trials.
#[derive(Debug, Clone, Serialize)]
pub struct GardingReport {
    pub trials: usize,
    pub garding_constant: f64,
    pub min_slack: f64,
    pub violations: usize,
}

/// Slack of `a(u,u) + C*‖u‖² ≥ (ρ²/6)‖Δu‖² + (α/2)‖u‖²_{H¹}` for one vector.
pub fn garding_slack(f: &FiberOperator, u: &[Complex64]) -> f64 {
    let basis = &f.basis;
    let vol = basis.grid().cell_volume();
    let form = vol * f.energy(u);
    let l2 = basis.weighted_norm_sq(u, |_| 1.0);
    let lap = basis.weighted_norm_sq(u, |i| basis.norm_sq(i).powi(2));
    let h1 = basis.weighted_norm_sq(u, |i| 1.0 + basis.norm_sq(i));
    form + f.garding_constant * l2 - f.rho * f.rho / 6.0 * lap - f.alpha / 2.0 * h1
}

/// Seeded random trials of the Gårding inequality on `f`.
///
/// Each trial draws a unit-L² vector whose coefficients decay like
/// `(1+|n|²)^{-p/2}` with a random `p ∈ [0, 3]`, mixing rough and smooth data.
pub fn garding_check(f: &FiberOperator, trials: usize, seed: u64) -> Result<GardingReport> {
    if trials == 0 {
        return Err(Error::BadDescription("garding_check needs at least one trial".into()));
    }
    let basis = &f.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let p: f64 = rng.random_range(0.0..3.0);
        let mut u: Vec<Complex64> = (0..basis.size())
            .map(|i| {
                let w = (1.0 + basis.norm_sq(i)).powf(-p / 2.0);
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * w
            })
            .collect();
        let nrm = basis.weighted_norm_sq(&u, |_| 1.0).sqrt();
        u.iter_mut().for_each(|c| *c /= nrm);
        let slack = garding_slack(f, &u);
        if slack < -GARDING_TOL {
            violations += 1;
        }
        min_slack = min_slack.min(slack);
    }
    if violations > 0 {
        return Err(Error::GardingViolation { slack: min_slack });
    }
    Ok(GardingReport {
        trials,
        garding_constant: f.garding_constant,
        min_slack,
        violations,
    })
}

/// Little-endian dump: `d: u32`, `N: u32`, `rho: f64`, `eta: d × f64`, then the
/// `size × size` matrix row-major as `(re: f64, im: f64)` pairs.
pub fn write_matrix_dump(f: &FiberOperator, w: &mut impl Write) -> Result<()> {
    let d = f.basis.dim();
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(f.basis.cutoff() as u32).to_le_bytes())?;
    w.write_all(&f.rho.to_le_bytes())?;
    for e in &f.eta {
        w.write_all(&e.to_le_bytes())?;
    }
    let n = f.size();
    for i in 0..n {
        for j in 0..n {
            let v = f.entry(i, j);
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parsed matrix dump.
#[derive(Debug, Clone)]
pub struct MatrixDump {
    pub dim: usize,
    pub cutoff: usize,
    pub rho: f64,
    pub eta: Vec<f64>,
    pub entries: Vec<Complex64>,
}

pub fn read_matrix_dump(r: &mut impl Read) -> Result<MatrixDump> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cutoff = u32::from_le_bytes(b4) as usize;
    let mut f64_next = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let rho = f64_next(r)?;
    let eta = (0..dim).map(|_| f64_next(r)).collect::<Result<Vec<_>>>()?;
    let size = (2 * cutoff + 1).pow(dim as u32);
    let mut entries = Vec::with_capacity(size * size);
    for _ in 0..size * size {
        let re = f64_next(r)?;
        let im = f64_next(r)?;
        entries.push(Complex64::new(re, im));
    }
    Ok(MatrixDump {
        dim,
        cutoff,
        rho,
        eta,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{load_coefficient, CoefficientDescription, TrigFactor, TrigFn, TrigTerm};
    use std::f64::consts::PI;

    fn cosine_coefficient(n: usize) -> PeriodicCoefficient {
        // a(y) = 2 + 2 cos y
        let terms = vec![
            TrigTerm { coeff: 2.0, factors: vec![], matrix: None },
            TrigTerm { coeff: 2.0, factors: vec![TrigFactor { func: TrigFn::Cos, k: 1 }], matrix: None },
        ];
        // a vanishes only at y = π, which no odd grid contains.
        load_coefficient(&CoefficientDescription::trig(1, terms, n)).unwrap()
    }

    #[test]
    fn basis_order_is_graded() {
        let b = PlaneWaveBasis::new(2, 2).unwrap();
        assert_eq!(b.size(), 25);
        assert_eq!(b.wavevector(0), &[0, 0]);
        let shells: Vec<i64> = (0..b.size())
            .map(|i| b.wavevector(i).iter().map(|v| v.abs()).max().unwrap())
            .collect();
        assert!(shells.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..b.size() {
            assert_eq!(b.index_of(b.wavevector(i)), Some(i));
        }
        assert_eq!(b, PlaneWaveBasis::new(2, 2).unwrap());
    }

    #[test]
    fn identity_is_diagonal() {
        let a = PeriodicCoefficient::identity(1);
        let b = PlaneWaveBasis::new(1, 4).unwrap();
        let f = assemble_fiber(&a, &b, 1.5, &[0.3]).unwrap();
        for i in 0..b.size() {
            let s = b.wavevector(i)[0] as f64 + 0.3;
            let want = s * s + 2.25 * s.powi(4);
            assert!((f.entry(i, i).re - want).abs() < 1e-12);
            for j in 0..b.size() {
                if i != j {
                    assert_eq!(f.entry(i, j), Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn constants_in_kernel_at_zero() {
        let a = load_coefficient(&CoefficientDescription::laminate([1.0, 4.0], 0.5, 65)).unwrap();
        let b = PlaneWaveBasis::new(1, 8).unwrap();
        let f = assemble_fiber(&a, &b, 0.0, &[0.0]).unwrap();
        for j in 0..b.size() {
            assert_eq!(f.entry(0, j).norm(), 0.0);
            assert_eq!(f.entry(j, 0).norm(), 0.0);
        }
    }

    /// Trapezoid quadrature of the form on basis pairs, independent of the FFT path.
    fn quadrature_entry(a: impl Fn(f64) -> f64, rho: f64, eta: f64, m: i64, n: i64) -> Complex64 {
        let q = 512;
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..q {
            let y = 2.0 * PI * k as f64 / q as f64;
            let em = Complex64::new(0.0, m as f64 * y).exp();
            let en = Complex64::new(0.0, n as f64 * y).exp();
            // (∂+iη) e_n = i(n+η) e_n ; (∂+iη)² e_n = −(n+η)² e_n
            let du = Complex64::new(0.0, n as f64 + eta) * en;
            let dv = Complex64::new(0.0, m as f64 + eta) * em;
            let lu = -(n as f64 + eta).powi(2) * en;
            let lv = -(m as f64 + eta).powi(2) * em;
            s += rho * rho * lu * lv.conj() + a(y) * du * dv.conj();
        }
        s / q as f64
    }

    #[test]
    fn matches_quadrature_oracle() {
        let a = cosine_coefficient(9);
        let b = PlaneWaveBasis::new(1, 1).unwrap();
        let f = assemble_fiber(&a, &b, 1.0, &[0.25]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (m, n) = (b.wavevector(i)[0], b.wavevector(j)[0]);
                let want = quadrature_entry(|y| 2.0 + 2.0 * y.cos(), 1.0, 0.25, m, n);
                assert!((f.entry(i, j) - want).norm() < 1e-12, "({m},{n})");
            }
        }
    }

    #[test]
    fn garding_at_constant_mode() {
        let a = PeriodicCoefficient::identity(1);
        let b = PlaneWaveBasis::new(1, 4).unwrap();
        let f = assemble_fiber(&a, &b, 1.0, &[0.0]).unwrap();
        let mut u = vec![Complex64::new(0.0, 0.0); b.size()];
        u[0] = Complex64::new((2.0 * PI).powf(-0.5), 0.0);
        // Unit L² constant: the form vanishes and the H¹ norm is 1.
        let slack = garding_slack(&f, &u);
        assert!((slack - (f.garding_constant() - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dump_roundtrip() {
        let a = cosine_coefficient(9);
        let b = PlaneWaveBasis::new(1, 2).unwrap();
        let f = assemble_fiber(&a, &b, 0.7, &[-0.2]).unwrap();
        let mut buf = Vec::new();
        write_matrix_dump(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 25 * 16);
        let back = read_matrix_dump(&mut buf.as_slice()).unwrap();
        assert_eq!((back.dim, back.cutoff, back.rho), (1, 2, 0.7));
        assert_eq!(back.eta, vec![-0.2]);
        assert_eq!(back.entries[6], f.entry(1, 1));
    }

    #[test]
    fn rejects_eta_outside_cell() {
        let a = PeriodicCoefficient::identity(1);
        let b = PlaneWaveBasis::new(1, 2).unwrap();
        assert!(matches!(
            assemble_fiber(&a, &b, 0.0, &[0.6]),
            Err(Error::EtaOutOfCell { .. })
        ));
    }
}

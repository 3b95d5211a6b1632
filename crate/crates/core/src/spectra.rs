//! Bloch eigenvalues and gauge-fixed eigenvectors of the fiber operators.
//!
//! Eigenvectors are returned L²(Y)-normalized, `(2π)^d Σ|c_n|² = 1`, with
//! the constant-mode coefficient rotated to the positive real axis.
//! [`gauge_fix`] additionally rescales so the mean is `(2π)^{-d/2}`.

use std::f64::consts::PI;
use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fiber::{assemble_fiber, FiberOperator, PlaneWaveBasis};
use crate::torus::PeriodicCoefficient;

/// Residual bound `‖Kv − λv‖ ≤ RESIDUAL_TOL (1 + |λ|)` for unit `v`.
pub const RESIDUAL_TOL: f64 = 1e-8;
const MAX_REFINEMENT_SWEEPS: usize = 12;
/// Smallest relative constant-mode amplitude accepted by [`gauge_fix`].
pub const GAUGE_AMPLITUDE_TOL: f64 = 1e-8;
/// Second Neumann eigenvalue of `−Δ` on `[0, 2π]^d`; the Neumann spectrum is `{(k/2)²}`.
pub const NEUMANN_LAMBDA2: f64 = 0.25;
/// Second periodic eigenvalue of `Δ²`, `|n|⁴` at `|n| = 1`.
pub const BILAPLACIAN_KAPPA2: f64 = 1.0;

/// Lowest eigenpairs of one fiber.
#[derive(Debug, Clone)]
pub struct FiberSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<Complex64>>,
    pub residuals: Vec<f64>,
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn mat_mul_k(f: &FiberOperator, x: &Mat<Complex64>) -> Mat<Complex64> {
    let mut y = f.coefficient_part() * x;
    let bih = f.biharmonic_diagonal();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            y[(i, j)] += x[(i, j)] * bih[i];
        }
    }
    y
}

/// `(2π)^{-d/2}`: the L²(Y)-unit constant.
pub fn unit_constant(dim: usize) -> f64 {
    (2.0 * PI).powf(-(dim as f64) / 2.0)
}

/// Scale to L²(Y)-unit norm and rotate the constant mode onto the positive reals.
/// Vectors with no constant-mode content are rotated on their largest entry.
pub fn normalize_phase(v: &mut [Complex64], dim: usize) {
    let nrm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let pivot = if v[0].norm() > 1e-12 * nrm {
        v[0]
    } else {
        v.iter()
            .copied()
            .fold(zero(), |best, c| if c.norm() > best.norm() { c } else { best })
    };
    let phase = pivot.conj() / pivot.norm();
    let scale = unit_constant(dim) / nrm;
    v.iter_mut().for_each(|c| *c *= phase * scale);
}

fn residual(f: &FiberOperator, v: &[Complex64], lambda: f64) -> f64 {
    let kv = f.apply(v);
    let r: f64 = kv
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b * lambda).norm_sqr())
        .sum();
    let n: f64 = v.iter().map(|c| c.norm_sqr()).sum();
    (r / n).sqrt()
}

/// Lowest `modes` eigenpairs of `f`, ascending.
///
/// A dense Hermitian eigensolve is followed by sweeps of block inverse
/// iteration (until the residuals settle) and Rayleigh–Ritz with a Cholesky factor of `K − σI`, `σ` below
/// the spectrum. Cholesky is insensitive to the diagonal grading `ρ²|n|⁴`,
/// so the refined vectors keep small residuals even when `‖K‖` is huge.
pub fn solve_fiber(f: &FiberOperator, modes: usize) -> Result<FiberSpectrum> {
    let size = f.size();
    if modes == 0 || modes > size {
        return Err(Error::BadDescription(format!(
            "mode count {modes} must lie in 1..={size}"
        )));
    }
    let k = f.matrix();
    let eig = k
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let p = (2 * modes + 4).min(size);
    let mut x = Mat::<Complex64>::from_fn(size, p, |i, j| eig.U()[(i, j)]);
    let lowest = vals[0].re;
    if p < size {
        let sigma = lowest - 1.0_f64.max(lowest.abs());
        let mut shifted = k.clone();
        for i in 0..size {
            shifted[(i, i)] -= Complex64::new(sigma, 0.0);
        }
        let llt = shifted
            .llt(Side::Lower)
            .map_err(|e| Error::EigensolverFailure(format!("shifted Cholesky: {e:?}")))?;
        for _ in 0..MAX_REFINEMENT_SWEEPS {
            let y = llt.solve(&x);
            let q = y.qr().compute_thin_Q();
            let kq = mat_mul_k(f, &q);
            let h = q.adjoint() * &kq;
            let h = Mat::<Complex64>::from_fn(p, p, |i, j| 0.5 * (h[(i, j)] + h[(j, i)].conj()));
            let small = h
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::EigensolverFailure(format!("Ritz step: {e:?}")))?;
            x = &q * small.U();
            let kx = &kq * small.U();
            let theta = small.S().column_vector();
            let converged = (0..modes).all(|j| {
                let t = theta[j].re;
                let r = (0..size)
                    .map(|i| (kx[(i, j)] - x[(i, j)] * t).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                r <= 1e-2 * RESIDUAL_TOL * (1.0 + t.abs())
            });
            if converged {
                break;
            }
        }
    }
    let dim = f.basis().dim();
    let mut pairs: Vec<(f64, Vec<Complex64>)> = (0..p)
        .map(|j| {
            let mut v: Vec<Complex64> = (0..size).map(|i| x[(i, j)]).collect();
            normalize_phase(&mut v, dim);
            (f.rayleigh_quotient(&v), v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.truncate(modes);
    let mut out = FiberSpectrum {
        eigenvalues: Vec::with_capacity(modes),
        eigenvectors: Vec::with_capacity(modes),
        residuals: Vec::with_capacity(modes),
    };
    for (lambda, v) in pairs {
        let r = residual(f, &v, lambda);
        if !r.is_finite() {
            return Err(Error::EigensolverFailure("non-finite eigenpair".into()));
        }
        if r > RESIDUAL_TOL * (1.0 + lambda.abs()) {
            log::debug!("eigenpair residual {r:.3e} above {RESIDUAL_TOL:e}(1+|λ|), λ = {lambda}");
        }
        out.eigenvalues.push(lambda);
        out.eigenvectors.push(v);
        out.residuals.push(r);
    }
    Ok(out)
}

/// Lowest eigenpair by shifted inverse iteration from the constant mode.
///
/// Fast near `η = 0`, where the constant mode is already a good guess and the
/// spectral gap makes each step contract by roughly `λ₁/λ₂`. Falls back to
/// [`solve_fiber`] when the iteration stalls.
pub fn ground_state(f: &FiberOperator) -> Result<(f64, Vec<Complex64>)> {
    const SHIFT: f64 = 1e-3;
    const MAX_ITERS: usize = 60;
    let size = f.size();
    let mut s = f.matrix();
    for i in 0..size {
        s[(i, i)] += Complex64::new(SHIFT, 0.0);
    }
    let dim = f.basis().dim();
    if let Ok(llt) = s.llt(Side::Lower) {
        let mut v = Mat::<Complex64>::zeros(size, 1);
        v[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut lambda = f64::INFINITY;
        for _ in 0..MAX_ITERS {
            let w = llt.solve(&v);
            let nrm = w.norm_l2();
            v = w * faer::Scale(Complex64::new(1.0 / nrm, 0.0));
            let col: Vec<Complex64> = (0..size).map(|i| v[(i, 0)]).collect();
            let next = f.rayleigh_quotient(&col);
            let settled = (next - lambda).abs() <= 1e-15 * (1.0 + next.abs());
            lambda = next;
            if settled {
                let mut col = col;
                normalize_phase(&mut col, dim);
                let r = residual(f, &col, lambda);
                if r <= RESIDUAL_TOL * (1.0 + lambda.abs()) {
                    return Ok((f.rayleigh_quotient(&col), col));
                }
            }
        }
    }
    let spec = solve_fiber(f, 1)?;
    Ok((spec.eigenvalues[0], spec.eigenvectors[0].clone()))
}

/// Eigenvector normalized so that `M_Y(φ) = (2π)^{-d/2}` with real positive constant mode.
#[derive(Debug, Clone)]
pub struct GaugeFixedEigenfunction {
    pub coeffs: Vec<Complex64>,
    pub eta: Vec<f64>,
    /// `|M_Y(φ) − (2π)^{-d/2}|` after fixing.
    pub normalization_residual: f64,
    /// `‖φ‖_{L²(Y)}` after fixing (reported, not imposed).
    pub l2_norm: f64,
}

/// Rotate and scale `vec` so its mean is `(2π)^{-d/2}`.
pub fn gauge_fix(vec: &[Complex64], eta: &[f64], dim: usize) -> Result<GaugeFixedEigenfunction> {
    let nrm = vec.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let amplitude = if nrm > 0.0 { vec[0].norm() / nrm } else { 0.0 };
    if amplitude < GAUGE_AMPLITUDE_TOL {
        return Err(Error::DegenerateGauge { amplitude });
    }
    let target = unit_constant(dim);
    let factor = target * vec[0].conj() / (vec[0].norm() * vec[0].norm());
    let coeffs: Vec<Complex64> = vec.iter().map(|c| c * factor).collect();
    let normalization_residual = (coeffs[0] - target).norm();
    let l2_norm =
        ((2.0 * PI).powi(dim as i32) * coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
    Ok(GaugeFixedEigenfunction {
        coeffs,
        eta: eta.to_vec(),
        normalization_residual,
        l2_norm,
    })
}

/// Half-open grid `η_k = −1/2 + k/p`, `k = 0..p`, per axis (axis 0 fastest).
pub fn eta_grid(dim: usize, points_per_axis: usize) -> Vec<Vec<f64>> {
    let total = points_per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let k = idx % points_per_axis;
                    idx /= points_per_axis;
                    -0.5 + k as f64 / points_per_axis as f64
                })
                .collect()
        })
        .collect()
}

/// Eigenvalue branches over a quasimomentum grid.
#[derive(Debug, Clone)]
pub struct BlochBand {
    pub rho: f64,
    pub etas: Vec<Vec<f64>>,
    /// `lambdas[e][m]`, ascending in `m`.
    pub lambdas: Vec<Vec<f64>>,
    pub modes_requested: usize,
    /// `eigvecs[e][m]`, L²-normalized with positive constant mode.
    pub eigvecs: Vec<Vec<Vec<Complex64>>>,
    pub residuals: Vec<Vec<f64>>,
    /// Gauge residual per `(η, m)`; NaN where the constant mode is degenerate.
    pub gauge_residuals: Vec<Vec<f64>>,
    /// Per mode: `max |λ_m(η) − λ_m(η')| / |η − η'|` over neighbouring grid points.
    pub lipschitz: Vec<f64>,
}

/// Solve every fiber of `etas` in parallel.
pub fn band_sweep(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    etas: &[Vec<f64>],
    modes: usize,
) -> Result<BlochBand> {
    let dim = basis.dim();
    let spectra: Vec<FiberSpectrum> = etas
        .par_iter()
        .map(|eta| solve_fiber(&assemble_fiber(a, basis, rho, eta)?, modes))
        .collect::<Result<_>>()?;
    let mut band = BlochBand {
        rho,
        etas: etas.to_vec(),
        lambdas: Vec::with_capacity(etas.len()),
        modes_requested: modes,
        eigvecs: Vec::with_capacity(etas.len()),
        residuals: Vec::with_capacity(etas.len()),
        gauge_residuals: Vec::with_capacity(etas.len()),
        lipschitz: vec![0.0; modes],
    };
    for (eta, s) in etas.iter().zip(spectra) {
        band.gauge_residuals.push(
            s.eigenvectors
                .iter()
                .map(|v| gauge_fix(v, eta, dim).map_or(f64::NAN, |g| g.normalization_residual))
                .collect(),
        );
        band.lambdas.push(s.eigenvalues);
        band.eigvecs.push(s.eigenvectors);
        band.residuals.push(s.residuals);
    }
    band.lipschitz = lipschitz_ratios(&band.etas, &band.lambdas, modes);
    Ok(band)
}

fn eta_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lipschitz_ratios(etas: &[Vec<f64>], lambdas: &[Vec<f64>], modes: usize) -> Vec<f64> {
    let mut spacing = f64::INFINITY;
    for i in 0..etas.len() {
        for j in 0..i {
            let d = eta_distance(&etas[i], &etas[j]);
            if d > 0.0 {
                spacing = spacing.min(d);
            }
        }
    }
    let mut out = vec![0.0f64; modes];
    for i in 0..etas.len() {
        for j in 0..i {
            let d = eta_distance(&etas[i], &etas[j]);
            if d > 0.0 && d <= spacing * (1.0 + 1e-9) {
                for m in 0..modes {
                    out[m] = out[m].max((lambdas[i][m] - lambdas[j][m]).abs() / d);
                }
            }
        }
    }
    out
}

/// The first `count` sorted values of `{1 + |n|²}` and `{1 + |n|⁴}` over `n ∈ Z^d`.
pub fn lipschitz_weights(dim: usize, count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut radius = 1i64;
    loop {
        let side = (2 * radius + 1) as usize;
        let mut norms: Vec<i64> = (0..side.pow(dim as u32))
            .map(|mut idx| {
                (0..dim)
                    .map(|_| {
                        let k = (idx % side) as i64 - radius;
                        idx /= side;
                        k * k
                    })
                    .sum()
            })
            .collect();
        norms.sort_unstable();
        // Every n with |n|² ≤ radius² lies in the box, so those values are complete.
        let complete = norms.iter().filter(|&&q| q <= radius * radius).count();
        if complete >= count {
            let mu = norms[..count].iter().map(|&q| 1.0 + q as f64).collect();
            let nu = norms[..count].iter().map(|&q| 1.0 + (q * q) as f64).collect();
            return (mu, nu);
        }
        radius *= 2;
    }
}

/// Fitted `C` in `Lip(λ_m) ≤ C (μ_m + ρ² ν_m)`, maximized over modes.
pub fn fitted_lipschitz_constant(band: &BlochBand, dim: usize) -> f64 {
    let (mu, nu) = lipschitz_weights(dim, band.modes_requested);
    let r2 = band.rho * band.rho;
    band.lipschitz
        .iter()
        .zip(mu.iter().zip(&nu))
        .map(|(l, (m, n))| l / (m + r2 * n))
        .fold(0.0, f64::max)
}

/// Smallest `|η|` along `direction` (unit-normalized) at which gauge fixing of
/// the first eigenvector fails, scanning `steps` points up to the cell boundary.
/// `None` when the whole ray is gauge-valid.
pub fn empirical_gauge_radius(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    direction: &[f64],
    steps: usize,
) -> Result<Option<f64>> {
    let dn = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tmax = 0.5 / direction.iter().fold(0.0f64, |m, v| m.max(v.abs() / dn));
    for s in 1..=steps {
        let t = tmax * s as f64 / steps as f64;
        let eta: Vec<f64> = direction.iter().map(|v| t * v / dn).collect();
        let f = assemble_fiber(a, basis, rho, &eta)?;
        let (_, v) = ground_state(&f)?;
        if let Err(Error::DegenerateGauge { .. }) = gauge_fix(&v, &eta, basis.dim()) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// CSV with columns `eta_1..eta_d, m, lambda, gauge_residual`; rows ordered by `η` then `m`.
pub fn write_band_csv(band: &BlochBand, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = band.etas.first().map_or(0, |e| e.len());
    let mut header: Vec<String> = (1..=dim).map(|a| format!("eta_{a}")).collect();
    header.extend(["m", "lambda", "gauge_residual"].map(String::from));
    wtr.write_record(&header)?;
    for (e, eta) in band.etas.iter().enumerate() {
        for m in 0..band.modes_requested {
            let mut rec: Vec<String> = eta.iter().map(|v| v.to_string()).collect();
            rec.push((m + 1).to_string());
            rec.push(band.lambdas[e][m].to_string());
            rec.push(band.gauge_residuals[e][m].to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_symbol() {
        let a = PeriodicCoefficient::identity(1);
        let b = PlaneWaveBasis::new(1, 4).unwrap();
        let f = assemble_fiber(&a, &b, 1.0, &[-0.5]).unwrap();
        let s = solve_fiber(&f, 2).unwrap();
        assert!((s.eigenvalues[0] - 0.3125).abs() < 1e-13);
        let f = assemble_fiber(&a, &b, 0.0, &[0.25]).unwrap();
        let s = solve_fiber(&f, 2).unwrap();
        assert!((s.eigenvalues[0] - 0.0625).abs() < 1e-13);
        assert!((s.eigenvalues[1] - 0.5625).abs() < 1e-13);
    }

    #[test]
    fn gauge_is_phase_invariant() {
        let v = vec![Complex64::new(0.3, 0.4), Complex64::new(-0.1, 0.2), Complex64::new(0.0, 0.5)];
        let g1 = gauge_fix(&v, &[0.1], 1).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        let w: Vec<_> = v.iter().map(|c| c * rot).collect();
        let g2 = gauge_fix(&w, &[0.1], 1).unwrap();
        for (a, b) in g1.coeffs.iter().zip(&g2.coeffs) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(g1.normalization_residual < 1e-15);
        let bad = vec![Complex64::new(1e-12, 0.0), Complex64::new(1.0, 0.0)];
        assert!(matches!(gauge_fix(&bad, &[0.4], 1), Err(Error::DegenerateGauge { .. })));
    }

    #[test]
    fn lipschitz_weights_1d_and_2d() {
        let (mu, nu) = lipschitz_weights(1, 5);
        assert_eq!(mu, vec![1.0, 2.0, 2.0, 5.0, 5.0]);
        assert_eq!(nu, vec![1.0, 2.0, 2.0, 17.0, 17.0]);
        let (mu, _) = lipschitz_weights(2, 9);
        assert_eq!(mu, vec![1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn eta_grid_is_half_open() {
        let g = eta_grid(2, 4);
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], vec![-0.5, -0.5]);
        assert_eq!(g[1], vec![-0.25, -0.5]);
        assert!(g.iter().all(|e| e.iter().all(|v| (-0.5..0.5).contains(v))));
    }
}

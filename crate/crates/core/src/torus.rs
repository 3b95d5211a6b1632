//! Periodic grids, fields and coefficient matrices on the torus `Y = [0, 2π)^d`.
//!
//! Fourier convention shared by the whole crate:
//!
//! ```text
//! û(n) = (2π)^{-d} ∫_Y u(y) e^{-i n·y} dy,      M_Y(u) = û(0)
//! ```
//!
//! On a grid with `n` points per axis this is the DFT divided by `n^d`.
//! Norms are the true integrals over `Y`, so
//! `‖u‖²_{H^s} = (2π)^d Σ (1 + |n|²)^s |û(n)|²` and `‖1‖_{L²} = (2π)^{d/2}`.
//!
//! Grid data is stored flat with axis 0 varying fastest. Fourier
//! coefficients use the same layout in DFT order, so flat index `k` holds the
//! wavenumber returned by [`TorusGrid::wavenumber`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;

const SYMMETRY_TOL: f64 = 1e-12;
const ELLIPTICITY_TOL: f64 = 1e-12;

/// Uniform lattice `y_k = 2πk / n` on `[0, 2π)^d` with odd `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n_per_axis: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadDimension("grid dimension must be at least 1".into()));
        }
        if n_per_axis < 3 || n_per_axis % 2 == 0 {
            return Err(Error::BadGrid(format!(
                "n_per_axis must be odd and >= 3, got {n_per_axis}"
            )));
        }
        Ok(Self { dim, n_per_axis })
    }

    /// Grid whose Fourier modes are exactly `|n|_∞ ≤ half_width`.
    pub fn with_half_width(dim: usize, half_width: usize) -> Result<Self> {
        Self::new(dim, 2 * half_width + 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    /// Largest resolved wavenumber per axis, `(n_per_axis - 1) / 2`.
    pub fn half_width(&self) -> usize {
        (self.n_per_axis - 1) / 2
    }

    pub fn len(&self) -> usize {
        self.n_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Y| = (2π)^d`.
    pub fn cell_volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let n = self.n_per_axis;
        (0..self.dim)
            .map(|_| {
                let k = idx % n;
                idx /= n;
                k
            })
            .collect()
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .rev()
            .fold(0, |acc, &k| acc * self.n_per_axis + k)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = 2.0 * PI / self.n_per_axis as f64;
        self.unravel(idx).into_iter().map(|k| h * k as f64).collect()
    }

    /// Signed wavenumber stored at DFT-order flat index `idx`.
    pub fn wavenumber(&self, idx: usize) -> Vec<i64> {
        let n = self.n_per_axis as i64;
        self.unravel(idx)
            .into_iter()
            .map(|k| {
                let k = k as i64;
                if k <= n / 2 {
                    k
                } else {
                    k - n
                }
            })
            .collect()
    }

    /// DFT-order flat index of wavenumber `k`, if it is resolved by the grid.
    pub fn index_of_wavenumber(&self, k: &[i64]) -> Option<usize> {
        let n = self.n_per_axis as i64;
        let half = self.half_width() as i64;
        let mut idx = 0usize;
        for &ka in k.iter().rev() {
            if ka.abs() > half {
                return None;
            }
            idx = idx * self.n_per_axis + ka.rem_euclid(n) as usize;
        }
        Some(idx)
    }
}

/// In-place multidimensional DFT over a flat axis-0-fastest array, unnormalized.
pub(crate) fn fft_nd(n: usize, dim: usize, data: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(n, direction);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = n.pow(axis as u32);
        let block = stride * n;
        for base in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + off + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, v) in line.iter().enumerate() {
                    data[base + off + k * stride] = *v;
                }
            }
        }
    }
}

/// Grid values to Fourier coefficients under the crate convention.
pub fn forward_dft(grid: &TorusGrid, values: &[Complex64]) -> Vec<Complex64> {
    let mut data = values.to_vec();
    fft_nd(grid.n_per_axis, grid.dim, &mut data, FftDirection::Forward);
    let scale = 1.0 / grid.len() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Fourier coefficients back to grid values.
pub fn inverse_dft(grid: &TorusGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut data = coeffs.to_vec();
    fft_nd(grid.n_per_axis, grid.dim, &mut data, FftDirection::Inverse);
    data
}

/// Complex periodic function held as grid values and Fourier coefficients.
#[derive(Debug, Clone)]
pub struct PeriodicFunction {
    grid: TorusGrid,
    values: Vec<Complex64>,
    coeffs: Vec<Complex64>,
}

impl PeriodicFunction {
    pub fn from_values(grid: TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::BadGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let coeffs = forward_dft(&grid, &values);
        Ok(Self { grid, values, coeffs })
    }

    /// Coefficients in DFT order.
    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::BadGrid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        let values = inverse_dft(&grid, &coeffs);
        Ok(Self { grid, values, coeffs })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values: Vec<_> = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        let coeffs = forward_dft(&grid, &values);
        Self { grid, values, coeffs }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `û(k)`, zero for unresolved wavenumbers.
    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.grid
            .index_of_wavenumber(k)
            .map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    /// Relative error of inverse(forward(values)).
    pub fn roundtrip_error(&self) -> f64 {
        let back = inverse_dft(&self.grid, &self.coeffs);
        let num: f64 = back
            .iter()
            .zip(&self.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// `M_Y(u) = (2π)^{-d} ∫ u`.
pub fn mean_value(u: &PeriodicFunction) -> Complex64 {
    u.coeffs[0]
}

/// `‖u‖_{H^s} = (2π)^{d/2} (Σ (1+|n|²)^s |û(n)|²)^{1/2}`; `s = 0` is the L² norm over `Y`.
pub fn sobolev_norm(u: &PeriodicFunction, s: f64) -> f64 {
    let grid = &u.grid;
    let sum: f64 = u
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let n2: i64 = grid.wavenumber(i).iter().map(|k| k * k).sum();
            (1.0 + n2 as f64).powf(s) * c.norm_sqr()
        })
        .sum();
    (grid.cell_volume() * sum).sqrt()
}

/// Symmetric, uniformly elliptic `d×d` matrix field on the torus.
#[derive(Debug, Clone)]
pub struct PeriodicCoefficient {
    grid: TorusGrid,
    samples: Vec<f64>,
    fourier: Vec<Vec<Complex64>>,
    alpha: f64,
    upper: f64,
}

impl PeriodicCoefficient {
    /// Validate `samples` (row-major `d×d` block per grid point) and transform it.
    pub fn from_samples(grid: TorusGrid, samples: Vec<f64>) -> Result<Self> {
        let d = grid.dim();
        let npts = grid.len();
        if samples.len() != npts * d * d {
            return Err(Error::BadDimension(format!(
                "expected {} samples ({} points x {d}x{d}), got {}",
                npts * d * d,
                npts,
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadDescription(format!("non-finite sample at index {bad}")));
        }
        let mut alpha = f64::INFINITY;
        let mut upper: f64 = 0.0;
        for p in 0..npts {
            let a = &samples[p * d * d..(p + 1) * d * d];
            for j in 0..d {
                for l in (j + 1)..d {
                    let defect = (a[j * d + l] - a[l * d + j]).abs();
                    if defect > SYMMETRY_TOL * a[j * d + l].abs().max(1.0) {
                        return Err(Error::NotSymmetric { defect, point: p });
                    }
                }
            }
            let ev = sym_eigenvalues(a, d);
            alpha = alpha.min(ev[0]);
            upper = upper.max(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        if alpha <= ELLIPTICITY_TOL {
            return Err(Error::NotElliptic { alpha });
        }
        let fourier = (0..d * d)
            .map(|e| {
                let vals: Vec<Complex64> = (0..npts)
                    .map(|p| Complex64::new(samples[p * d * d + e], 0.0))
                    .collect();
                let mut f = forward_dft(&grid, &vals);
                // Drop DFT roundoff so constant and trigonometric fields have exact zeros.
                let floor = 1e-15 * upper;
                f.iter_mut().for_each(|c| {
                    if c.norm() < floor {
                        *c = Complex64::new(0.0, 0.0);
                    }
                });
                f
            })
            .collect();
        Ok(Self {
            grid,
            samples,
            fourier,
            alpha,
            upper,
        })
    }

    /// Scalar field times the identity.
    pub fn from_scalar_samples(grid: TorusGrid, values: &[f64]) -> Result<Self> {
        let d = grid.dim();
        if values.len() != grid.len() {
            return Err(Error::BadDimension(format!(
                "expected {} scalar samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        let mut samples = vec![0.0; values.len() * d * d];
        for (p, v) in values.iter().enumerate() {
            for j in 0..d {
                samples[p * d * d + j * d + j] = *v;
            }
        }
        Self::from_samples(grid, samples)
    }

    /// Constant matrix field (row-major `d×d`).
    pub fn constant(dim: usize, matrix: &[f64]) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::BadDimension(format!(
                "constant matrix must have {} entries",
                dim * dim
            )));
        }
        let grid = TorusGrid::new(dim, 3)?;
        let samples = matrix.repeat(grid.len());
        Self::from_samples(grid, samples)
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for j in 0..dim {
            m[j * dim + j] = 1.0;
        }
        Self::constant(dim, &m).expect("identity is a valid coefficient")
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Ellipticity constant: grid minimum of the smallest eigenvalue.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Grid maximum of the spectral norm.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Row-major `d×d` sample at grid point `p`.
    pub fn sample(&self, p: usize) -> &[f64] {
        let d2 = self.dim() * self.dim();
        &self.samples[p * d2..(p + 1) * d2]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `Â_{jl}(k)`, zero outside the resolved band.
    pub fn fourier_entry(&self, j: usize, l: usize, k: &[i64]) -> Complex64 {
        let d = self.dim();
        self.grid
            .index_of_wavenumber(k)
            .map_or(Complex64::new(0.0, 0.0), |i| self.fourier[j * d + l][i])
    }

    /// Full DFT-order coefficient array of entry `(j, l)`.
    pub fn fourier_component(&self, j: usize, l: usize) -> &[Complex64] {
        &self.fourier[j * self.dim() + l]
    }

    /// `M_Y(A)` as a row-major real matrix.
    pub fn mean_matrix(&self) -> Vec<f64> {
        self.fourier.iter().map(|f| f[0].re).collect()
    }

    /// Largest `|k|_∞` carrying a coefficient above `tol` (relative to `upper`).
    pub fn bandwidth(&self, tol: f64) -> usize {
        let mut band = 0;
        for comp in &self.fourier {
            for (i, c) in comp.iter().enumerate() {
                if c.norm() > tol * self.upper {
                    let k = self.grid.wavenumber(i);
                    band = band.max(k.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0));
                }
            }
        }
        band
    }

    /// Scalar harmonic mean `M_Y(1/a)^{-1}` of entry `(j, j)`.
    pub fn harmonic_mean_diag(&self, j: usize) -> f64 {
        let d = self.dim();
        let n = self.grid.len() as f64;
        let s: f64 = (0..self.grid.len())
            .map(|p| 1.0 / self.samples[p * d * d + j * d + j])
            .sum();
        n / s
    }
}

/// Versioned coefficient description, usually read from JSON.
///
/// ```json
/// {"version": 1, "dim": 1, "kind": "laminate", "n_per_axis": 257,
///  "payload": {"values": [1.0, 4.0], "fraction": 0.5}}
/// ```
///
/// Payloads by kind:
///
/// * `constant`: `{"matrix": [[..], ..]}`
/// * `trig`: `{"terms": [{"coeff": c, "factors": [{"fn": "sin"|"cos", "k": k}, ..], "matrix": [[..]]}]}`.
///   Each term is `c · Π_a fn_a(k_a y_a) · matrix`; `factors` is empty (constant
///   term) or has one entry per axis, `matrix` defaults to the identity.
/// * `laminate`: `{"values": [a1, a2], "fraction": θ, "axis": 0}`, scalar times
///   the identity, `a1` on `[0, 2πθ)` and `a2` on `[2πθ, 2π)` along `axis`.
///   Grid points sitting exactly on a jump take the average `(a1 + a2) / 2`.
/// * `samples`: `{"values": [..]}` inline or `{"file": "path"}` with
///   whitespace-separated numbers, either one scalar per point or a row-major
///   `d×d` block per point (axis 0 fastest).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientDescription {
    #[serde(default = "default_version")]
    pub version: u32,
    pub dim: usize,
    pub kind: CoefficientKind,
    pub n_per_axis: usize,
    pub payload: serde_json::Value,
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    Constant,
    Trig,
    Laminate,
    Samples,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantPayload {
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub coeff: f64,
    #[serde(default)]
    pub factors: Vec<TrigFactor>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigFactor {
    #[serde(rename = "fn")]
    pub func: TrigFn,
    pub k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigFn {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrigPayload {
    terms: Vec<TrigTerm>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaminatePayload {
    values: [f64; 2],
    fraction: f64,
    #[serde(default)]
    axis: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplesPayload {
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    file: Option<PathBuf>,
}

impl CoefficientDescription {
    pub fn constant(dim: usize, matrix: Vec<Vec<f64>>) -> Self {
        Self {
            version: 1,
            dim,
            kind: CoefficientKind::Constant,
            n_per_axis: 3,
            payload: serde_json::json!({ "matrix": matrix }),
        }
    }

    pub fn laminate(values: [f64; 2], fraction: f64, n_per_axis: usize) -> Self {
        Self {
            version: 1,
            dim: 1,
            kind: CoefficientKind::Laminate,
            n_per_axis,
            payload: serde_json::json!({ "values": values, "fraction": fraction }),
        }
    }

    pub fn trig(dim: usize, terms: Vec<TrigTerm>, n_per_axis: usize) -> Self {
        Self {
            version: 1,
            dim,
            kind: CoefficientKind::Trig,
            n_per_axis,
            payload: serde_json::json!({ "terms": terms }),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read a description; a relative sample `file` is resolved against the
    /// description's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut desc = Self::from_json_str(&text)?;
        desc.resolve_relative_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(desc)
    }

    pub fn resolve_relative_paths(&mut self, base: &Path) {
        if self.kind != CoefficientKind::Samples {
            return;
        }
        if let Some(file) = self.payload.get("file").and_then(|f| f.as_str()) {
            let p = Path::new(file);
            if p.is_relative() {
                let joined = base.join(p);
                self.payload["file"] = serde_json::Value::String(joined.to_string_lossy().into());
            }
        }
    }
}

fn payload<T: serde::de::DeserializeOwned>(desc: &CoefficientDescription) -> Result<T> {
    serde_json::from_value(desc.payload.clone())
        .map_err(|e| Error::BadDescription(format!("{:?} payload: {e}", desc.kind)))
}

fn square_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::BadDimension(format!("matrix must be {dim}x{dim}")));
    }
    Ok(rows.concat())
}

/// Build and validate a coefficient from its description.
pub fn load_coefficient(desc: &CoefficientDescription) -> Result<PeriodicCoefficient> {
    if desc.version != 1 {
        return Err(Error::BadDescription(format!(
            "unsupported description version {}",
            desc.version
        )));
    }
    let d = desc.dim;
    let grid = TorusGrid::new(d, desc.n_per_axis)?;
    match desc.kind {
        CoefficientKind::Constant => {
            let p: ConstantPayload = payload(desc)?;
            let m = square_matrix(&p.matrix, d)?;
            PeriodicCoefficient::from_samples(grid.clone(), m.repeat(grid.len()))
        }
        CoefficientKind::Trig => {
            let p: TrigPayload = payload(desc)?;
            let mut mats = Vec::with_capacity(p.terms.len());
            for t in &p.terms {
                if !t.factors.is_empty() && t.factors.len() != d {
                    return Err(Error::BadDimension(format!(
                        "trig term needs 0 or {d} factors, got {}",
                        t.factors.len()
                    )));
                }
                mats.push(match &t.matrix {
                    Some(m) => square_matrix(m, d)?,
                    None => identity_flat(d),
                });
            }
            let mut samples = vec![0.0; grid.len() * d * d];
            for pt in 0..grid.len() {
                let y = grid.point(pt);
                for (t, m) in p.terms.iter().zip(&mats) {
                    let s = t.coeff * trig_product(&t.factors, &y);
                    for (e, v) in m.iter().enumerate() {
                        samples[pt * d * d + e] += s * v;
                    }
                }
            }
            PeriodicCoefficient::from_samples(grid, samples)
        }
        CoefficientKind::Laminate => {
            let p: LaminatePayload = payload(desc)?;
            if p.axis >= d {
                return Err(Error::BadDimension(format!(
                    "laminate axis {} out of range for dim {d}",
                    p.axis
                )));
            }
            if !(p.fraction > 0.0 && p.fraction < 1.0) {
                return Err(Error::BadDescription(format!(
                    "laminate fraction must lie in (0, 1), got {}",
                    p.fraction
                )));
            }
            let n = grid.n_per_axis() as f64;
            let values: Vec<f64> = (0..grid.len())
                .map(|pt| {
                    let k = grid.unravel(pt)[p.axis] as f64;
                    laminate_value(p.values, p.fraction, k / n)
                })
                .collect();
            PeriodicCoefficient::from_scalar_samples(grid, &values)
        }
        CoefficientKind::Samples => {
            let p: SamplesPayload = payload(desc)?;
            let values = match (p.values, p.file) {
                (Some(v), None) => v,
                (None, Some(path)) => read_sample_file(&path)?,
                _ => {
                    return Err(Error::BadDescription(
                        "samples payload needs exactly one of `values` or `file`".into(),
                    ))
                }
            };
            if values.len() == grid.len() {
                PeriodicCoefficient::from_scalar_samples(grid, &values)
            } else {
                PeriodicCoefficient::from_samples(grid, values)
            }
        }
    }
}

fn identity_flat(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for j in 0..d {
        m[j * d + j] = 1.0;
    }
    m
}

fn trig_product(factors: &[TrigFactor], y: &[f64]) -> f64 {
    factors
        .iter()
        .zip(y)
        .map(|(f, &ya)| {
            let arg = f.k as f64 * ya;
            match f.func {
                TrigFn::Cos => arg.cos(),
                TrigFn::Sin => arg.sin(),
            }
        })
        .product()
}

/// Laminate value at normalized position `t = y / 2π ∈ [0, 1)`.
fn laminate_value(values: [f64; 2], fraction: f64, t: f64) -> f64 {
    const JUMP_TOL: f64 = 1e-12;
    if t.abs() < JUMP_TOL || (t - fraction).abs() < JUMP_TOL {
        0.5 * (values[0] + values[1])
    } else if t < fraction {
        values[0]
    } else {
        values[1]
    }
}

fn read_sample_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| {
                Error::BadDescription(format!("{}: bad sample {tok:?}: {e}", path.display()))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wavenumber_index_roundtrip() {
        let g = TorusGrid::new(2, 7).unwrap();
        for i in 0..g.len() {
            let k = g.wavenumber(i);
            assert_eq!(g.index_of_wavenumber(&k), Some(i));
        }
        assert_eq!(g.index_of_wavenumber(&[4, 0]), None);
    }

    #[test]
    fn rejects_even_grid() {
        assert!(matches!(TorusGrid::new(1, 8), Err(Error::BadGrid(_))));
        assert!(matches!(TorusGrid::new(0, 9), Err(Error::BadDimension(_))));
    }

    #[test]
    fn mean_of_constant_and_modes() {
        let g = TorusGrid::new(2, 9).unwrap();
        let c = Complex64::new(1.5, -0.5);
        let u = PeriodicFunction::from_fn(g.clone(), |_| c);
        assert!((mean_value(&u) - c).norm() < 1e-15);
        let u = PeriodicFunction::from_fn(g.clone(), |y| Complex64::new(0.0, y[0] + 2.0 * y[1]).exp());
        assert!(mean_value(&u).norm() < 1e-15);
        let u = PeriodicFunction::from_fn(g, |y| Complex64::new(2.0 + y[0].sin(), 0.0));
        assert!((mean_value(&u) - 2.0).norm() < 1e-15);
    }

    #[test]
    fn sobolev_norm_direct_summation() {
        // u = e^{i y1} has û(1,0) = 1; H² weight (1+1)² = 4, times |Y| = (2π)².
        let g = TorusGrid::new(2, 5).unwrap();
        let u = PeriodicFunction::from_fn(g.clone(), |y| Complex64::new(0.0, y[0]).exp());
        let expected = (4.0 * (2.0 * PI).powi(2)).sqrt();
        assert_relative_eq!(sobolev_norm(&u, 2.0), expected, max_relative = 1e-13);
        let zero = PeriodicFunction::from_fn(g.clone(), |_| Complex64::new(0.0, 0.0));
        assert_eq!(sobolev_norm(&zero, 1.0), 0.0);
        let c = PeriodicFunction::from_fn(g, |_| Complex64::new(3.0, 0.0));
        for s in [0.0, 1.0, 2.0] {
            assert_relative_eq!(sobolev_norm(&c, s), 3.0 * 2.0 * PI, max_relative = 1e-13);
        }
    }

    #[test]
    fn identity_coefficient() {
        let a = PeriodicCoefficient::identity(1);
        assert_eq!(a.alpha(), 1.0);
        assert!((a.fourier_entry(0, 0, &[0]) - 1.0).norm() < 1e-15);
        assert!(a.fourier_entry(0, 0, &[1]).norm() < 1e-15);
    }

    #[test]
    fn laminate_alpha_and_mean() {
        let a = load_coefficient(&CoefficientDescription::laminate([1.0, 4.0], 0.5, 129)).unwrap();
        assert_eq!(a.alpha(), 1.0);
        assert_eq!(a.upper(), 4.0);
        assert_relative_eq!(a.mean_matrix()[0], 2.5, max_relative = 1e-14);
    }

    #[test]
    fn trig_product_coefficient() {
        let terms = vec![
            TrigTerm { coeff: 2.0, factors: vec![], matrix: None },
            TrigTerm {
                coeff: 1.0,
                factors: vec![
                    TrigFactor { func: TrigFn::Sin, k: 1 },
                    TrigFactor { func: TrigFn::Sin, k: 1 },
                ],
                matrix: None,
            },
        ];
        let a = load_coefficient(&CoefficientDescription::trig(2, terms, 33)).unwrap();
        // Minimum of sin·sin on the grid is close to, but above, -1.
        assert!(a.alpha() >= 1.0 && a.alpha() < 1.01);
        // sin y1 sin y2 = -(1/4) Σ ±e^{i(±y1 ±y2)}: Â(1,1) = -1/4, Â(1,-1) = 1/4.
        assert!((a.fourier_entry(0, 0, &[1, 1]) + 0.25).norm() < 1e-14);
        assert!((a.fourier_entry(1, 1, &[1, -1]) - 0.25).norm() < 1e-14);
        assert!(a.fourier_entry(0, 1, &[1, 1]).norm() < 1e-14);
        assert_eq!(a.bandwidth(1e-12), 1);
    }

    #[test]
    fn rejects_bad_coefficients() {
        let d = CoefficientDescription::constant(2, vec![vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(matches!(load_coefficient(&d), Err(Error::NotSymmetric { .. })));
        let d = CoefficientDescription::constant(2, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(load_coefficient(&d), Err(Error::NotElliptic { .. })));
        let d = CoefficientDescription::constant(2, vec![vec![1.0]]);
        assert!(matches!(load_coefficient(&d), Err(Error::BadDimension(_))));
        let d = CoefficientDescription::laminate([1.0, -4.0], 0.5, 9);
        assert!(matches!(load_coefficient(&d), Err(Error::NotElliptic { .. })));
    }

    #[test]
    fn rejects_unknown_payload_fields() {
        let text = r#"{"dim":1,"kind":"laminate","n_per_axis":9,
            "payload":{"values":[1,4],"fraction":0.5,"colour":"red"}}"#;
        let d = CoefficientDescription::from_json_str(text).unwrap();
        assert!(matches!(load_coefficient(&d), Err(Error::BadDescription(_))));
        let text = r#"{"dim":1,"kind":"laminate","n_per_axis":9,"payload":{},"extra":1}"#;
        assert!(CoefficientDescription::from_json_str(text).is_err());
    }

    #[test]
    fn sample_file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("blochhom-samples-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let vals: Vec<String> = (0..9).map(|k| format!("{}", 2.0 + (k as f64).cos())).collect();
        std::fs::write(dir.join("a.txt"), vals.join("\n")).unwrap();
        let desc = r#"{"version":1,"dim":1,"kind":"samples","n_per_axis":9,"payload":{"file":"a.txt"}}"#;
        std::fs::write(dir.join("coef.json"), desc).unwrap();
        let d = CoefficientDescription::from_file(&dir.join("coef.json")).unwrap();
        let a = load_coefficient(&d).unwrap();
        assert_relative_eq!(a.sample(3)[0], 2.0 + 3f64.cos(), max_relative = 1e-15);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

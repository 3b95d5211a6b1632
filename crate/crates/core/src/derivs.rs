//! Taylor data of the first Bloch eigenpair at `η = 0`.
//!
//! Differentiating `K(η)φ(η) = λ(η)φ(η)` with the multi-index Leibniz rule
//! gives, for `β ≠ 0`,
//!
//! ```text
//! K(0) ∂^βφ = −Σ_{0<γ≤β} C(β,γ) ∂^γK ∂^{β−γ}φ + Σ_{0<γ≤β} C(β,γ) ∂^γλ ∂^{β−γ}φ
//! ```
//!
//! with `C(β,γ) = Π_a binom(β_a, γ_a)`. The gauge `M_Y(φ(η)) = (2π)^{-d/2}`
//! makes every `∂^βφ`, `β ≠ 0`, zero-mean; the mean of the equation then
//! yields `∂^βλ`, after which `∂^βφ` is solved on the zero-mean subspace with
//! one factorization of `K(0)` shared by all `β`.
//!
//! `K(η)` is a polynomial of degree 4 in `η`; its derivatives at 0, applied to
//! a coefficient vector `v`, are (with `δ` the Kronecker delta):
//!
//! ```text
//! ∂_j K v        = Σ_n [e_j·Â(m−n)n + m·Â(m−n)e_j] v_n + 4ρ²|m|² m_j v_m
//! ∂_j∂_k K v     = Σ_n [Â_jk + Â_kj](m−n) v_n + ρ²(4δ_jk|m|² + 8 m_j m_k) v_m
//! ∂_j∂_k∂_l K v  = 8ρ²(δ_jk m_l + δ_jl m_k + δ_kl m_j) v_m
//! ∂_j∂_k∂_l∂_p K = 8ρ²(δ_jk δ_lp + δ_jl δ_kp + δ_jp δ_kl)
//! ```
//!
//! which are the Fourier symbols (`∇ ↦ i n`) of `4iρ²(...)`,
//! `−4ρ²δ_jk∇² − 8ρ²∂_j∂_k + 2a_jk`, `−8iρ²(δ∂)` and `8ρ²(δδ)`.
//!
//! Hessian entries are raw derivatives `∂^{e_k+e_l}λ`; the Taylor coefficient
//! of `η^β` is `∂^βλ / β!`, so `λ₁(η) ≈ ½ ηᵀHη` and `A^hom = H / 2`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{solve_cell_with, CellOperator};
use crate::error::{Error, Result};
use crate::fiber::PlaneWaveBasis;
use crate::linalg::loglog_slope;
use crate::spectra::unit_constant;
use crate::tensor::{HomogenizedTensor, TensorLabel, TensorRoute};
use crate::torus::{PeriodicCoefficient, PeriodicFunction};

/// Highest order with a nonzero operator derivative.
pub const MAX_ORDER: usize = 4;
/// Bound on the mean of a recursion right-hand side, relative to its scale.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Multi-index `β ∈ N^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn unit(dim: usize, j: usize) -> Self {
        let mut v = vec![0; dim];
        v[j] = 1;
        Self(v)
    }

    pub fn from_components(c: &[u8]) -> Self {
        Self(c.to_vec())
    }

    /// `e_{j_1} + … + e_{j_r}` (0-based axes).
    pub fn from_axes(dim: usize, axes: &[usize]) -> Self {
        let mut v = vec![0; dim];
        for &a in axes {
            v[a] += 1;
        }
        Self(v)
    }

    pub fn components(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `β! = Π β_a!`.
    pub fn factorial(&self) -> u64 {
        self.0.iter().map(|&b| (1..=b as u64).product::<u64>()).product()
    }

    /// `C(β, γ) = Π_a binom(β_a, γ_a)`, exact in integers.
    pub fn binomial(&self, gamma: &Self) -> u64 {
        self.0
            .iter()
            .zip(&gamma.0)
            .map(|(&b, &g)| binom(b as u64, g as u64))
            .product()
    }

    /// Axes repeated by multiplicity, ascending: `2e1+e2 ↦ [0, 0, 1]`.
    pub fn axes(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(a, &b)| std::iter::repeat_n(a, b as usize))
            .collect()
    }

    /// All `0 < γ ≤ self`.
    pub fn nonzero_sub_indices(&self) -> Vec<Self> {
        let mut out = vec![Vec::new()];
        for &b in &self.0 {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<u8>| {
                    (0..=b).map(move |g| {
                        let mut p = prefix.clone();
                        p.push(g);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(Self).filter(|g| !g.is_zero()).collect()
    }
}

fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

impl fmt::Display for MultiIndex {
    /// `"0"` or `"e1+e1+e2"` with 1-based axes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self.axes().iter().map(|a| format!("e{}", a + 1)).collect();
        f.write_str(&parts.join("+"))
    }
}

/// All multi-indices with `|β| ≤ max_order`, graded, lexicographically
/// descending within a grade (`e1` before `e2`).
pub fn graded_indices(dim: usize, max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        let mut grade = Vec::new();
        compositions(dim, order, &mut Vec::new(), &mut grade);
        grade.sort_by(|a: &Vec<u8>, b| b.cmp(a));
        out.extend(grade.into_iter().map(MultiIndex));
    }
    out
}

fn compositions(dim: usize, left: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() + 1 == dim {
        prefix.push(left as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for v in 0..=left {
        prefix.push(v as u8);
        compositions(dim, left - v, prefix, out);
        prefix.pop();
    }
}

/// The five operator-derivative forms by order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stencil {
    /// `𝒜^ρ(0) = ρ²Δ² − div A∇`
    Base,
    /// `4iρ²(Δ∂_j + …) + i(div A e_j + e_j·A∇)`
    First,
    /// `−4ρ²δ_jk∇² − 8ρ²∂_j∂_k + 2a_jk`
    Second,
    /// `−8iρ²(δ_jk∂_l + δ_jl∂_k + δ_kl∂_j)`
    Third,
    /// `8ρ²(δ_jkδ_lp + δ_jlδ_kp + δ_jpδ_kl)`
    Fourth,
}

pub const STENCILS: [Stencil; 5] = [
    Stencil::Base,
    Stencil::First,
    Stencil::Second,
    Stencil::Third,
    Stencil::Fourth,
];

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// `∂^γ K(0) v` for `1 ≤ |γ| ≤ 4`.
pub fn apply_operator_derivative(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    gamma: &MultiIndex,
    v: &[Complex64],
) -> Vec<Complex64> {
    let d = basis.dim();
    let size = basis.size();
    let r2 = rho * rho;
    let ax = gamma.axes();
    let mut out = vec![czero(); size];
    match ax.len() {
        1 => {
            let j = ax[0];
            let mut diff = vec![0i64; d];
            for (i, o) in out.iter_mut().enumerate() {
                let m = basis.wavevector(i);
                let mut s = czero();
                for (jj, vn) in v.iter().enumerate() {
                    if vn.norm_sqr() == 0.0 {
                        continue;
                    }
                    let n = basis.wavevector(jj);
                    for c in 0..d {
                        diff[c] = m[c] - n[c];
                    }
                    let mut w = czero();
                    for c in 0..d {
                        w += a.fourier_entry(j, c, &diff) * n[c] as f64
                            + a.fourier_entry(c, j, &diff) * m[c] as f64;
                    }
                    s += w * vn;
                }
                let m2 = basis.norm_sq(i);
                *o = s + v[i] * (4.0 * r2 * m2 * m[j] as f64);
            }
        }
        2 => {
            let (j, k) = (ax[0], ax[1]);
            let mut diff = vec![0i64; d];
            for (i, o) in out.iter_mut().enumerate() {
                let m = basis.wavevector(i);
                let mut s = czero();
                for (jj, vn) in v.iter().enumerate() {
                    if vn.norm_sqr() == 0.0 {
                        continue;
                    }
                    let n = basis.wavevector(jj);
                    for c in 0..d {
                        diff[c] = m[c] - n[c];
                    }
                    s += (a.fourier_entry(j, k, &diff) + a.fourier_entry(k, j, &diff)) * vn;
                }
                let m2 = basis.norm_sq(i);
                let diag = r2 * (4.0 * kd(j, k) * m2 + 8.0 * (m[j] * m[k]) as f64);
                *o = s + v[i] * diag;
            }
        }
        3 => {
            let (j, k, l) = (ax[0], ax[1], ax[2]);
            for (i, o) in out.iter_mut().enumerate() {
                let m = basis.wavevector(i);
                let w = 8.0
                    * r2
                    * (kd(j, k) * m[l] as f64 + kd(j, l) * m[k] as f64 + kd(k, l) * m[j] as f64);
                *o = v[i] * w;
            }
        }
        4 => {
            let w = fourth_weight(&ax) * r2;
            for (o, vi) in out.iter_mut().zip(v) {
                *o = vi * w;
            }
        }
        _ => {}
    }
    out
}

/// `8(δ_jk δ_lp + δ_jl δ_kp + δ_jp δ_kl)`: 24 for `4e_j`, 8 for `2e_j + 2e_k`.
fn fourth_weight(ax: &[usize]) -> f64 {
    let (j, k, l, p) = (ax[0], ax[1], ax[2], ax[3]);
    8.0 * (kd(j, k) * kd(l, p) + kd(j, l) * kd(k, p) + kd(j, p) * kd(k, l))
}

/// `M_Y(a_jk v)`.
fn mean_product(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, j: usize, k: usize, v: &[Complex64]) -> Complex64 {
    v.iter()
        .enumerate()
        .map(|(i, c)| {
            let minus: Vec<i64> = basis.wavevector(i).iter().map(|x| -x).collect();
            a.fourier_entry(j, k, &minus) * c
        })
        .sum()
}

/// `M_Y(e_j·A∇v)`.
fn mean_flux(a: &PeriodicCoefficient, basis: &PlaneWaveBasis, j: usize, v: &[Complex64]) -> Complex64 {
    let d = basis.dim();
    v.iter()
        .enumerate()
        .map(|(i, c)| {
            let n = basis.wavevector(i);
            let minus: Vec<i64> = n.iter().map(|x| -x).collect();
            (0..d)
                .map(|r| a.fourier_entry(j, r, &minus) * Complex64::new(0.0, n[r] as f64))
                .sum::<Complex64>()
                * c
        })
        .sum()
}

/// One row of the table.
#[derive(Debug, Clone)]
pub struct DerivativeEntry {
    pub beta: MultiIndex,
    /// `∂^βλ₁(0)`; real up to roundoff.
    pub lambda: Complex64,
    /// `∂^βφ₁(0)` as basis coefficients.
    pub phi: Vec<Complex64>,
    /// Mean of the right-hand side before the solve.
    pub rhs_mean: f64,
}

/// `∂^βλ₁(0)` and `∂^βφ₁(0)` for all `|β| ≤ max_order`.
#[derive(Debug, Clone)]
pub struct DerivativeTable {
    pub rho: f64,
    pub basis: PlaneWaveBasis,
    pub entries: Vec<DerivativeEntry>,
    pub stencils: [Stencil; 5],
    index: BTreeMap<MultiIndex, usize>,
}

impl DerivativeTable {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn get(&self, beta: &MultiIndex) -> Option<&DerivativeEntry> {
        self.index.get(beta).map(|&i| &self.entries[i])
    }

    pub fn lambda(&self, beta: &MultiIndex) -> Complex64 {
        self.get(beta).expect("multi-index in table").lambda
    }

    pub fn phi(&self, beta: &MultiIndex) -> &[Complex64] {
        &self.get(beta).expect("multi-index in table").phi
    }

    pub fn phi_function(&self, beta: &MultiIndex) -> PeriodicFunction {
        self.basis.to_function(self.phi(beta))
    }

    /// Raw Hessian `∂^{e_k+e_l}λ₁(0)`, row-major.
    pub fn hessian(&self) -> Vec<f64> {
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        for k in 0..d {
            for l in 0..d {
                h[k * d + l] = self.lambda(&MultiIndex::from_axes(d, &[k, l])).re;
            }
        }
        h
    }

    /// `A^hom = H/2`.
    pub fn tensor(&self) -> HomogenizedTensor {
        let raw = self.hessian().into_iter().map(|v| 0.5 * v).collect();
        HomogenizedTensor::new(
            self.dim(),
            raw,
            TensorRoute::DerivativeRecursion,
            TensorLabel::Rho(self.rho),
        )
    }

    /// `max |∂^βλ|` over odd `|β|`.
    pub fn odd_order_defect(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.beta.order() % 2 == 1)
            .fold(0.0, |m, e| m.max(e.lambda.norm()))
    }

    /// JSON object keyed by `β` strings.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for e in &self.entries {
            map.insert(
                e.beta.to_string(),
                serde_json::json!({
                    "lambda": [e.lambda.re, e.lambda.im],
                    "phi_h1_norm": self.basis.sobolev_norm(&e.phi, 1.0),
                    "rhs_mean": e.rhs_mean,
                    "phi": e.phi.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                }),
            );
        }
        serde_json::json!({
            "rho": self.rho,
            "dim": self.dim(),
            "cutoff": self.basis.cutoff(),
            "stencils": self.stencils,
            "entries": map,
        })
    }
}

/// Run the recursion up to `max_order ≤ 4`.
pub fn derivative_recursion(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    max_order: usize,
) -> Result<DerivativeTable> {
    let op = CellOperator::new(a, basis, rho)?;
    derivative_recursion_with(&op, a, max_order)
}

/// Recursion reusing an existing factorization of `K(0)`.
pub fn derivative_recursion_with(
    op: &CellOperator,
    a: &PeriodicCoefficient,
    max_order: usize,
) -> Result<DerivativeTable> {
    if max_order > MAX_ORDER {
        return Err(Error::BadDescription(format!(
            "derivative order {max_order} exceeds {MAX_ORDER}"
        )));
    }
    let basis = op.basis().clone();
    let rho = op.rho();
    let d = basis.dim();
    let phi0_mean = unit_constant(d);
    let mut phi0 = vec![czero(); basis.size()];
    phi0[0] = Complex64::new(phi0_mean, 0.0);
    let zero = MultiIndex::zero(d);
    let mut table = DerivativeTable {
        rho,
        basis: basis.clone(),
        entries: vec![DerivativeEntry {
            beta: zero.clone(),
            lambda: czero(),
            phi: phi0.clone(),
            rhs_mean: 0.0,
        }],
        stencils: STENCILS,
        index: BTreeMap::from([(zero, 0)]),
    };
    let all = graded_indices(d, max_order);
    for order in 1..=max_order {
        let grade: Vec<MultiIndex> = all.iter().filter(|b| b.order() == order).cloned().collect();
        let solved: Vec<(MultiIndex, Complex64, Vec<Complex64>, f64)> = grade
            .par_iter()
            .map(|beta| {
                let lambda = lambda_from_means(a, &basis, rho, &table, beta, phi0_mean);
                let (rhs, scale) = recursion_rhs(a, &basis, rho, &table, beta, lambda);
                let mean = rhs[0].norm();
                if mean > COMPATIBILITY_TOL * scale.max(1.0) {
                    return Err(Error::CompatibilityViolation {
                        beta: beta.to_string(),
                        mean,
                    });
                }
                Ok((beta.clone(), lambda, rhs, mean))
            })
            .collect::<Result<_>>()?;
        let rhs: Vec<Vec<Complex64>> = solved.iter().map(|s| s.2.clone()).collect();
        let phis = op.solve_many(&rhs);
        for ((beta, lambda, _, mean), phi) in solved.into_iter().zip(phis) {
            if phi.iter().any(|c| !c.is_finite()) {
                return Err(Error::SingularSystem(format!("non-finite solution for {beta}")));
            }
            table.index.insert(beta.clone(), table.entries.len());
            table.entries.push(DerivativeEntry {
                beta,
                lambda,
                phi,
                rhs_mean: mean,
            });
        }
    }
    Ok(table)
}

/// `∂^βλ` from the averaged equation:
///
/// ```text
/// ∂^βλ · M(φ₀) = Σ_{j≤k} C(β, e_j+e_k) M((a_jk + a_kj) ∂^{β−e_j−e_k}φ)
///              − i Σ_j β_j M(e_j·A∇∂^{β−e_j}φ)
///              + [|β| = 4] 8ρ²(δδ + δδ + δδ) M(φ₀)
/// ```
///
/// The second-order sum runs over unordered pairs, i.e. over multi-indices
/// `γ = e_j + e_k`; summing ordered pairs would count mixed `γ` twice.
fn lambda_from_means(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    table: &DerivativeTable,
    beta: &MultiIndex,
    phi0_mean: f64,
) -> Complex64 {
    let d = basis.dim();
    let mut s = czero();
    for j in 0..d {
        for k in j..d {
            let gamma = MultiIndex::from_axes(d, &[j, k]);
            if gamma.le(beta) {
                let c = beta.binomial(&gamma) as f64;
                let v = table.phi(&beta.sub(&gamma));
                s += c * (mean_product(a, basis, j, k, v) + mean_product(a, basis, k, j, v));
            }
        }
        let ej = MultiIndex::unit(d, j);
        if ej.le(beta) {
            let v = table.phi(&beta.sub(&ej));
            s -= Complex64::new(0.0, beta.components()[j] as f64) * mean_flux(a, basis, j, v);
        }
    }
    if beta.order() == 4 {
        s += rho * rho * fourth_weight(&beta.axes()) * phi0_mean;
    }
    s / phi0_mean
}

/// Right-hand side for `∂^βφ` and the magnitude scale of its terms.
fn recursion_rhs(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho: f64,
    table: &DerivativeTable,
    beta: &MultiIndex,
    lambda_beta: Complex64,
) -> (Vec<Complex64>, f64) {
    let mut rhs = vec![czero(); basis.size()];
    let mut scale: f64 = 0.0;
    for gamma in beta.nonzero_sub_indices() {
        if gamma.order() > MAX_ORDER {
            continue;
        }
        let c = beta.binomial(&gamma) as f64;
        let rest = beta.sub(&gamma);
        let v = table.phi(&rest);
        let kv = apply_operator_derivative(a, basis, rho, &gamma, v);
        let lam = if gamma == *beta { lambda_beta } else { table.lambda(&gamma) };
        for (r, (kvi, vi)) in rhs.iter_mut().zip(kv.iter().zip(v)) {
            let term = c * (lam * vi - kvi);
            scale = scale.max(c * kvi.norm()).max(c * (lam * vi).norm());
            *r += term;
        }
    }
    (rhs, scale)
}

/// Agreement of the recursion Hessian with another tensor.
#[derive(Debug, Clone, Serialize)]
pub struct HessianCrossCheck {
    pub recursion: Vec<f64>,
    pub other: Vec<f64>,
    pub max_relative: f64,
}

pub fn cross_check_hessian(table: &DerivativeTable, other: &HomogenizedTensor) -> HessianCrossCheck {
    let t = table.tensor();
    HessianCrossCheck {
        max_relative: t.relative_difference(other),
        recursion: t.matrix,
        other: other.matrix.clone(),
    }
}

/// Variance `M_Y(|g − M_Y(g)|²)` of `g = ∂^{e_j}φ₁(0) − iφ₁(0)χ_j`.
pub fn corrector_relation_variance(table: &DerivativeTable, chi: &[Complex64], j: usize) -> f64 {
    let d = table.dim();
    let phi0 = table.phi(&MultiIndex::zero(d))[0];
    let dphi = table.phi(&MultiIndex::unit(d, j));
    dphi.iter()
        .zip(chi)
        .skip(1)
        .map(|(p, c)| (p - Complex64::new(0.0, 1.0) * phi0 * c).norm_sqr())
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformEstimateRow {
    pub rho: f64,
    /// `max_j ‖∂^{e_j}φ₁‖_{H¹}`
    pub first_phi: f64,
    /// `max_{j,k} ‖∂^{e_j+e_k}φ₁‖_{H¹}`
    pub second_phi: f64,
    /// `max_{j,k} |∂^{e_j+e_k}λ₁ − 2M_Y(a_jk)|`
    pub second_lambda_gap: f64,
    /// `max_{|β|=3} ‖∂^βφ₁‖_{H¹}`
    pub third_phi: f64,
    /// `max_{|β|=4} ‖∂^βφ₁‖_{H¹}`
    pub fourth_phi: f64,
    /// `max_j |∂^{4e_j}λ₁|`
    pub fourth_lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformEstimateReport {
    pub rows: Vec<UniformEstimateRow>,
    pub slope_first_phi: f64,
    pub slope_second_phi: f64,
    pub slope_second_lambda_gap: f64,
    pub slope_third_phi: f64,
    pub slope_fourth_phi: f64,
    pub slope_fourth_lambda: f64,
}

/// Tables over `rho_list ⊂ [1, ∞)` with log-log slopes of each estimate.
/// Slopes of identically vanishing series are reported as NaN.
pub fn uniform_estimate_sweep(
    a: &PeriodicCoefficient,
    basis: &PlaneWaveBasis,
    rho_list: &[f64],
) -> Result<UniformEstimateReport> {
    let d = basis.dim();
    let mean = a.mean_matrix();
    let rows: Vec<UniformEstimateRow> = rho_list
        .par_iter()
        .map(|&rho| {
            let t = derivative_recursion(a, basis, rho, 4)?;
            let h1 = |b: &MultiIndex| basis.sobolev_norm(t.phi(b), 1.0);
            let by_order = |o: usize| {
                t.entries
                    .iter()
                    .filter(|e| e.beta.order() == o)
                    .fold(0.0f64, |m, e| m.max(h1(&e.beta)))
            };
            let mut gap: f64 = 0.0;
            let mut fourth_lambda: f64 = 0.0;
            for j in 0..d {
                fourth_lambda = fourth_lambda.max(t.lambda(&MultiIndex::from_axes(d, &[j; 4])).norm());
                for k in 0..d {
                    let l2 = t.lambda(&MultiIndex::from_axes(d, &[j, k]));
                    gap = gap.max((l2 - 2.0 * mean[j * d + k]).norm());
                }
            }
            Ok(UniformEstimateRow {
                rho,
                first_phi: by_order(1),
                second_phi: by_order(2),
                second_lambda_gap: gap,
                third_phi: by_order(3),
                fourth_phi: by_order(4),
                fourth_lambda,
            })
        })
        .collect::<Result<_>>()?;
    let slope = |f: &dyn Fn(&UniformEstimateRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        if ys.iter().any(|y| *y <= 0.0) {
            return f64::NAN;
        }
        loglog_slope(rho_list, &ys)
    };
    Ok(UniformEstimateReport {
        slope_first_phi: slope(&|r| r.first_phi),
        slope_second_phi: slope(&|r| r.second_phi),
        slope_second_lambda_gap: slope(&|r| r.second_lambda_gap),
        slope_third_phi: slope(&|r| r.third_phi),
        slope_fourth_phi: slope(&|r| r.fourth_phi),
        slope_fourth_lambda: slope(&|r| r.fourth_lambda),
        rows,
    })
}

/// Correctors from the same factorization as a derivative table, for the
/// corrector relation check.
pub fn correctors_for(op: &CellOperator, a: &PeriodicCoefficient) -> Result<Vec<Vec<Complex64>>> {
    Ok(solve_cell_with(op, a)?.chi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_order_and_names() {
        let idx = graded_indices(2, 2);
        let names: Vec<String> = idx.iter().map(|b| b.to_string()).collect();
        assert_eq!(names, ["0", "e1", "e2", "e1+e1", "e1+e2", "e2+e2"]);
        assert_eq!(graded_indices(2, 4).len(), 15);
        assert_eq!(graded_indices(1, 4).len(), 5);
    }

    #[test]
    fn binomials_are_exact() {
        let b = MultiIndex::from_components(&[3, 1]);
        assert_eq!(b.binomial(&MultiIndex::from_components(&[1, 1])), 3);
        assert_eq!(b.binomial(&MultiIndex::from_components(&[2, 0])), 3);
        assert_eq!(b.factorial(), 6);
        assert_eq!(b.nonzero_sub_indices().len(), 7);
        assert_eq!(binom(4, 2), 6);
    }

    #[test]
    fn identity_table() {
        let a = PeriodicCoefficient::identity(1);
        let basis = PlaneWaveBasis::new(1, 4).unwrap();
        for rho in [0.0, 0.5, 3.0] {
            let t = derivative_recursion(&a, &basis, rho, 4).unwrap();
            let e = |k: usize| t.lambda(&MultiIndex::from_components(&[k as u8])).re;
            assert_eq!(e(1), 0.0);
            assert!((e(2) - 2.0).abs() < 1e-14);
            assert_eq!(e(3), 0.0);
            assert!((e(4) - 24.0 * rho * rho).abs() < 1e-12 * (1.0 + rho * rho));
            assert!(t.entries[1..].iter().all(|e| e.phi.iter().all(|c| c.norm() == 0.0)));
        }
    }
}

//! Experiment configuration: schema, defaults and validation.

use std::path::{Path, PathBuf};

use blochhom::supercell::{check_regime, KappaLaw, TrigForcing};
use blochhom::tensor::DEFAULT_FD_STEP;
use blochhom::{load_coefficient, CoefficientDescription, PeriodicCoefficient, Regime};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Bands,
    Cell,
    Tensor,
    Derivs,
    SweepRho,
    Supercell,
    TransformLimit,
    VerifyAll,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bands => "bands",
            Self::Cell => "cell",
            Self::Tensor => "tensor",
            Self::Derivs => "derivs",
            Self::SweepRho => "sweep-rho",
            Self::Supercell => "supercell",
            Self::TransformLimit => "transform-limit",
            Self::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub coefficient: CoefficientDescription,
    pub numerics: Numerics,
    pub scenario: Scenario,
    #[serde(default)]
    pub scenario_params: serde_json::Value,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Plane-wave cutoff: modes `|n|_∞ ≤ N`.
    #[serde(rename = "N")]
    pub cutoff: usize,
    /// Overrides the coefficient's sampling grid when present.
    #[serde(default)]
    pub n_per_axis: Option<usize>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}

/// Pass thresholds; defaults are the acceptance tolerances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub hermitian: f64,
    pub garding_slack: f64,
    pub route_agreement: f64,
    pub weak_residual: f64,
    pub corrector_relation: f64,
    pub identity: f64,
    pub diagonalization: f64,
    pub higher_mode_slope: f64,
    pub energy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: 1e-12,
            garding_slack: 1e-9,
            route_agreement: 1e-4,
            weak_residual: 1e-8,
            corrector_relation: 1e-10,
            identity: 1e-7,
            diagonalization: 1e-7,
            higher_mode_slope: 0.8,
            energy: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeName {
    Zero,
    Theta,
    Infinity,
}

pub fn regime(name: RegimeName, theta: Option<f64>) -> Result<Regime, CliError> {
    Ok(match name {
        RegimeName::Zero => Regime::Zero,
        RegimeName::Infinity => Regime::Infinity,
        RegimeName::Theta => match theta {
            Some(t) if t > 0.0 && t.is_finite() => Regime::Theta(t),
            _ => return Err(CliError::Config("regime \"theta\" needs a finite theta > 0".into())),
        },
    })
}

fn default_eps_list() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625, 0.03125]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsParams {
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_eta_points")]
    pub eta_points: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

fn default_eta_points() -> usize {
    16
}

fn default_modes() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParams {
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorParams {
    #[serde(default = "default_tensor_rhos")]
    pub rho_list: Vec<f64>,
    /// Adds the matrix-free cell route with this cutoff.
    #[serde(default)]
    pub matrix_free_cutoff: Option<usize>,
    #[serde(default = "yes")]
    pub hessian: bool,
}

fn default_tensor_rhos() -> Vec<f64> {
    vec![0.0, 1.0, 4.0]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivsParams {
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "default_order")]
    pub max_order: usize,
}

fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRhoParams {
    #[serde(default = "default_sweep_rhos")]
    pub rho_list: Vec<f64>,
    /// Also tabulate the derivative estimates (requires every `ρ ≥ 1`).
    #[serde(default = "yes")]
    pub uniform: bool,
}

fn default_sweep_rhos() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupercellParams {
    #[serde(default = "default_eps_list")]
    pub epsilons: Vec<f64>,
    pub regime: RegimeName,
    #[serde(default)]
    pub theta: Option<f64>,
    /// Defaults to the regime's natural law.
    #[serde(default)]
    pub kappa: Option<KappaLaw>,
    /// Defaults to `cos x₁`.
    #[serde(default)]
    pub forcing: Option<TrigForcing>,
    /// Regime whose tensor serves as the wrong-tensor contrast.
    #[serde(default)]
    pub contrast: Option<RegimeName>,
    #[serde(default)]
    pub contrast_theta: Option<f64>,
    /// Run the Parseval/Plancherel/inversion/diagonalization check at the largest ε.
    #[serde(default = "yes")]
    pub identity_check: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformParams {
    #[serde(default = "default_eps_list")]
    pub epsilons: Vec<f64>,
    pub regime: RegimeName,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub kappa: Option<KappaLaw>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub modulation: f64,
    #[serde(default = "default_span")]
    pub span: usize,
    #[serde(default = "one")]
    pub window: f64,
}

fn default_sigma() -> f64 {
    1.5
}

fn default_span() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    #[serde(default = "default_verify_rhos")]
    pub rho_list: Vec<f64>,
    #[serde(default = "default_trials")]
    pub garding_trials: usize,
    #[serde(default = "default_eps_list")]
    pub epsilons: Vec<f64>,
    /// Quasimomentum grid points per axis; defaults to 16 in 1D, 6 otherwise.
    #[serde(default)]
    pub eta_points: Option<usize>,
    /// Basis cutoff for the supercell checks; defaults to `min(N, 16)`.
    #[serde(default)]
    pub supercell_cutoff: Option<usize>,
}

fn default_verify_rhos() -> Vec<f64> {
    vec![0.0, 0.1, 1.0, 10.0]
}

fn default_trials() -> usize {
    1000
}

/// Scenario parameters after validation.
#[derive(Debug, Clone)]
pub enum Params {
    Bands(BandsParams),
    Cell(CellParams),
    Tensor(TensorParams),
    Derivs(DerivsParams),
    SweepRho(SweepRhoParams),
    Supercell(SupercellParams),
    TransformLimit(TransformParams),
    VerifyAll(VerifyParams),
}

/// Everything a run needs, checked before any compute.
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    pub config: ExperimentConfig,
    pub coefficient: PeriodicCoefficient,
    pub params: Params,
}

fn params_from<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Result<T, CliError> {
    let v = if v.is_null() { serde_json::json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("scenario_params: {e}")))
}

fn check_rhos(list: &[f64]) -> Result<(), CliError> {
    if list.is_empty() || list.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(CliError::Config(format!("rho values must be finite and >= 0, got {list:?}")));
    }
    Ok(())
}

fn check_eps(list: &[f64]) -> Result<(), CliError> {
    if list.len() < 2 || list.iter().any(|e| !(e.is_finite() && *e > 0.0 && *e <= 1.0)) {
        return Err(CliError::Config(format!(
            "need at least two epsilons in (0, 1], got {list:?}"
        )));
    }
    Ok(())
}

/// The configured `κ` law, or the regime's natural one.
pub fn kappa_law(r: Regime, law: Option<&KappaLaw>) -> KappaLaw {
    law.cloned().unwrap_or_else(|| KappaLaw::for_regime(r))
}

fn check_kappa(r: Regime, law: Option<&KappaLaw>, eps: &[f64]) -> Result<(), CliError> {
    let kappas = kappa_law(r, law)
        .kappas(eps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    check_regime(r, eps, &kappas).map_err(|e| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.coefficient
            .resolve_relative_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(mut self) -> Result<ValidatedRun, CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        let n = &self.numerics;
        if n.cutoff == 0 {
            return Err(CliError::Config("numerics.N must be at least 1".into()));
        }
        if !(n.fd_step > 0.0 && n.fd_step < 0.25) {
            return Err(CliError::Config(format!("numerics.fd_step must lie in (0, 0.25), got {}", n.fd_step)));
        }
        if let Some(npa) = n.n_per_axis {
            self.coefficient.n_per_axis = npa;
        }
        let coefficient =
            load_coefficient(&self.coefficient).map_err(|e| CliError::Config(format!("coefficient: {e}")))?;
        let v = &self.scenario_params;
        let params = match self.scenario {
            Scenario::Bands => {
                let p: BandsParams = params_from(v)?;
                check_rhos(&[p.rho])?;
                if p.eta_points == 0 || p.modes == 0 {
                    return Err(CliError::Config("eta_points and modes must be positive".into()));
                }
                Params::Bands(p)
            }
            Scenario::Cell => {
                let p: CellParams = params_from(v)?;
                check_rhos(&[p.rho])?;
                Params::Cell(p)
            }
            Scenario::Tensor => {
                let p: TensorParams = params_from(v)?;
                check_rhos(&p.rho_list)?;
                Params::Tensor(p)
            }
            Scenario::Derivs => {
                let p: DerivsParams = params_from(v)?;
                check_rhos(&[p.rho])?;
                if p.max_order > blochhom::derivs::MAX_ORDER {
                    return Err(CliError::Config(format!(
                        "max_order must be at most {}",
                        blochhom::derivs::MAX_ORDER
                    )));
                }
                Params::Derivs(p)
            }
            Scenario::SweepRho => {
                let p: SweepRhoParams = params_from(v)?;
                check_rhos(&p.rho_list)?;
                if p.uniform && p.rho_list.iter().any(|r| *r < 1.0) {
                    return Err(CliError::Config("uniform estimates need every rho >= 1".into()));
                }
                Params::SweepRho(p)
            }
            Scenario::Supercell => {
                let p: SupercellParams = params_from(v)?;
                check_eps(&p.epsilons)?;
                check_kappa(regime(p.regime, p.theta)?, p.kappa.as_ref(), &p.epsilons)?;
                if let Some(c) = p.contrast {
                    regime(c, p.contrast_theta)?;
                }
                Params::Supercell(p)
            }
            Scenario::TransformLimit => {
                let p: TransformParams = params_from(v)?;
                check_eps(&p.epsilons)?;
                check_kappa(regime(p.regime, p.theta)?, p.kappa.as_ref(), &p.epsilons)?;
                if !(p.sigma > 0.0 && p.window > 0.0 && p.span > 0) {
                    return Err(CliError::Config("sigma, window and span must be positive".into()));
                }
                Params::TransformLimit(p)
            }
            Scenario::VerifyAll => {
                let p: VerifyParams = params_from(v)?;
                check_rhos(&p.rho_list)?;
                check_eps(&p.epsilons)?;
                if p.garding_trials == 0 {
                    return Err(CliError::Config("garding_trials must be positive".into()));
                }
                Params::VerifyAll(p)
            }
        };
        Ok(ValidatedRun {
            config: self,
            coefficient,
            params,
        })
    }
}

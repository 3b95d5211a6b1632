//! `verify-all`: every module's invariants at the configured tolerances,
//! stopping at the first breach.

use blochhom::cell::gradient_norm_sq;
use blochhom::derivs::{corrector_relation_variance, correctors_for, derivative_recursion_with};
use blochhom::spectra::{eta_grid, RESIDUAL_TOL};
use blochhom::supercell::{diagonalization_check, identity_check, smooth_random_function, KappaLaw};
use blochhom::tensor::{harmonic_mean_matrix, order_margin, tensor_from_cell, tensor_from_hessian};
use blochhom::{
    assemble_fiber, band_sweep, garding_check, homogenization_experiment, CellOperator, Error,
    PeriodicCoefficient, PlaneWaveBasis, Regime, SupercellProblem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Numerics, VerifyParams};
use crate::scenarios::{default_forcing, Outputs};
use crate::CliError;

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub module: &'static str,
    pub check: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
    /// The first failed check, or the compute error that stopped the suite.
    pub failure: Option<serde_json::Value>,
}

/// Signals the first breach; the record is already in the report.
struct Breach;

struct Suite {
    checks: Vec<CheckRecord>,
}

impl Suite {
    fn check(
        &mut self,
        module: &'static str,
        check: impl Into<String>,
        value: f64,
        relation: Relation,
        tolerance: f64,
    ) -> Result<(), Breach> {
        let passed = match relation {
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
        };
        let check = check.into();
        log::info!("{module}/{check}: {value:.3e} (tolerance {tolerance:.1e}) {}", if passed { "ok" } else { "FAILED" });
        self.checks.push(CheckRecord {
            module,
            check,
            value,
            relation,
            tolerance,
            passed,
        });
        if passed {
            Ok(())
        } else {
            Err(Breach)
        }
    }
}

enum Stop {
    Breach,
    Compute(CliError),
}

impl From<Breach> for Stop {
    fn from(_: Breach) -> Self {
        Stop::Breach
    }
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Compute(e.into())
    }
}

use Relation::{AtLeast, AtMost};

fn run_checks(
    suite: &mut Suite,
    a: &PeriodicCoefficient,
    n: &Numerics,
    p: &VerifyParams,
    seed: u64,
) -> Result<(), Stop> {
    let tol = &n.tolerances;
    let d = a.dim();
    let basis = PlaneWaveBasis::new(d, n.cutoff)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // fiber-operator
    for &rho in &p.rho_list {
        let eta: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let f = assemble_fiber(a, &basis, rho, &eta)?;
        let scale = f.garding_constant().max(1.0);
        suite.check("fiber", format!("hermitian rho={rho}"), f.hermitian_defect() / scale, AtMost, tol.hermitian)?;
        let slack = match garding_check(&f, p.garding_trials, rng.random()) {
            Ok(r) => r.min_slack,
            Err(Error::GardingViolation { slack }) => slack,
            Err(e) => return Err(e.into()),
        };
        suite.check("fiber", format!("garding rho={rho}"), slack, AtLeast, -tol.garding_slack)?;
    }

    // bloch-spectra
    let per_axis = p.eta_points.unwrap_or(if d == 1 { 16 } else { 6 });
    let etas = eta_grid(d, per_axis);
    let neg: Vec<Vec<f64>> = etas.iter().map(|e| e.iter().map(|v| -v).collect()).collect();
    for &rho in &p.rho_list {
        let band = band_sweep(a, &basis, rho, &etas, 2)?;
        let mirror = band_sweep(a, &basis, rho, &neg, 2)?;
        let residual = band
            .residuals
            .iter()
            .zip(&band.lambdas)
            .flat_map(|(r, l)| r.iter().zip(l).map(|(r, l)| r / (1.0 + l.abs())))
            .fold(0.0, f64::max);
        suite.check("spectra", format!("residual rho={rho}"), residual, AtMost, RESIDUAL_TOL)?;
        let even = band
            .lambdas
            .iter()
            .zip(&mirror.lambdas)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(x, y)| (x - y).abs() / (1.0 + x.abs())))
            .fold(0.0, f64::max);
        suite.check("spectra", format!("evenness rho={rho}"), even, AtMost, 1e-9)?;
        let gap = band.lambdas.iter().map(|l| l[1]).fold(f64::INFINITY, f64::min);
        suite.check("spectra", format!("second eigenvalue rho={rho}"), gap, AtLeast, a.alpha() / 4.0)?;
    }

    // cell-correctors, homogenized-tensor, eig-derivatives
    let harmonic = harmonic_mean_matrix(a);
    let mean = a.mean_matrix();
    let vol_sqrt = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0);
    for &rho in &p.rho_list {
        let op = CellOperator::new(a, &basis, rho)?;
        let set = blochhom::cell::solve_cell_with(&op, a)?;
        suite.check("cell", format!("weak residual rho={rho}"), set.weak_residual, AtMost, tol.weak_residual)?;
        let energy_ratio = set
            .chi
            .iter()
            .map(|c| gradient_norm_sq(&basis, c).sqrt() * a.alpha() / (a.upper() * vol_sqrt))
            .fold(0.0, f64::max);
        suite.check("cell", format!("energy bound rho={rho}"), energy_ratio, AtMost, 1.0 + 1e-12)?;

        let cell = blochhom::tensor::tensor_from_correctors(a, &set);
        let hess = tensor_from_hessian(a, &basis, rho, n.fd_step)?;
        let table = derivative_recursion_with(&op, a, 2)?;
        let rec = table.tensor();
        let routes = cell
            .relative_difference(&hess)
            .max(cell.relative_difference(&rec))
            .max(hess.relative_difference(&rec));
        suite.check("tensor", format!("route agreement rho={rho}"), routes, AtMost, tol.route_agreement)?;
        let bounds = order_margin(&harmonic, &cell.matrix, d).min(order_margin(&cell.matrix, &mean, d));
        suite.check("tensor", format!("harmonic/mean bounds rho={rho}"), bounds, AtLeast, -1e-10)?;

        let scale = cell.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        suite.check("derivs", format!("odd orders vanish rho={rho}"), table.odd_order_defect() / scale, AtMost, 1e-8)?;
        let chi = correctors_for(&op, a)?;
        let variance = chi
            .iter()
            .enumerate()
            .map(|(j, c)| corrector_relation_variance(&table, c, j))
            .fold(0.0, f64::max);
        suite.check("derivs", format!("corrector relation rho={rho}"), variance, AtMost, tol.corrector_relation)?;
    }
    let classical = tensor_from_cell(a, &basis, 0.0)?;
    suite.check("tensor", "classical tensor positive", classical.min_eigenvalue, AtLeast, 0.0)?;

    // supercell
    let cut = p.supercell_cutoff.unwrap_or(n.cutoff.min(16));
    let sbasis = PlaneWaveBasis::new(d, cut)?;
    let eps = 0.125;
    let sp = SupercellProblem::new(a.clone(), sbasis.clone(), eps, 8, eps)?;
    let width = sp.points_per_axis() as f64 / 8.0;
    let f = smooth_random_function(&sp, width, rng.random())?;
    let g = smooth_random_function(&sp, width, rng.random())?;
    let ids = identity_check(&sp, &f, &g)?;
    suite.check("supercell", "parseval", ids.parseval, AtMost, tol.identity)?;
    suite.check("supercell", "plancherel", ids.plancherel, AtMost, tol.identity)?;
    suite.check("supercell", "inversion", ids.inversion, AtMost, tol.identity)?;
    let diag = diagonalization_check(&sp, &f)?;
    suite.check("supercell", "diagonalization", diag.max_relative, AtMost, tol.diagonalization)?;
    let forcing = default_forcing(d);
    for regime in [Regime::Zero, Regime::Theta(1.0), Regime::Infinity] {
        let table = homogenization_experiment(
            a,
            &sbasis,
            &forcing,
            regime,
            &KappaLaw::for_regime(regime),
            &p.epsilons,
            None,
        )?;
        suite.check(
            "supercell",
            format!("higher-mode slope {regime}"),
            table.higher_mode_slope,
            AtLeast,
            tol.higher_mode_slope,
        )?;
        let energy = table
            .rows
            .iter()
            .map(|r| if r.energy >= 0.0 { r.energy_defect } else { f64::INFINITY })
            .fold(0.0, f64::max);
        suite.check("supercell", format!("energy identity {regime}"), energy, AtMost, tol.energy)?;
        let decreasing = if table.l2_strictly_decreasing() { 1.0 } else { 0.0 };
        suite.check("supercell", format!("l2 error decreasing {regime}"), decreasing, AtLeast, 1.0)?;
    }
    Ok(())
}

/// Run the suite and write `verify.json`; `Ok(false)` on a tolerance breach.
pub fn verify_all(
    a: &PeriodicCoefficient,
    n: &Numerics,
    p: &VerifyParams,
    seed: u64,
    out: &mut Outputs,
) -> Result<bool, CliError> {
    let mut suite = Suite { checks: Vec::new() };
    let outcome = run_checks(&mut suite, a, n, p, seed);
    let (failure, err) = match outcome {
        Ok(()) => (None, None),
        Err(Stop::Breach) => {
            let last = suite.checks.last().expect("a breach records its check");
            (Some(serde_json::to_value(last)?), None)
        }
        Err(Stop::Compute(e)) => (Some(serde_json::json!({ "error": e.to_string() })), Some(e)),
    };
    let report = VerifyReport {
        passed: failure.is_none(),
        checks: suite.checks,
        failure,
    };
    out.json("verify.json", &report)?;
    match err {
        Some(e) => Err(e),
        None => Ok(report.passed),
    }
}

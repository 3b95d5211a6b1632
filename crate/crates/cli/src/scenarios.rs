//! One function per scenario; each writes its artifacts into `out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blochhom::cell::{write_corrector_csv, CellOperator};
use blochhom::derivs::{
    corrector_relation_variance, correctors_for, cross_check_hessian, derivative_recursion_with,
    uniform_estimate_sweep,
};
use blochhom::spectra::{eta_grid, write_band_csv};
use blochhom::supercell::{
    diagonalization_check, identity_check, smooth_random_function, transform_to_fourier_limit,
    write_convergence_csv, GaussianProfile, TrigForcing,
};
use blochhom::tensor::{
    regime_tensor, stability_sweep, tensor_from_cell, tensor_from_hessian, write_tensor_csv,
};
use blochhom::{
    band_sweep, homogenization_experiment, solve_cell, tensor_from_cell_matrix_free, HomogenizedTensor,
    PeriodicCoefficient, PlaneWaveBasis, Regime, SupercellProblem,
};
use serde::Serialize;

use crate::config::{
    kappa_law, regime, BandsParams, CellParams, DerivsParams, Numerics, SupercellParams, SweepRhoParams,
    TensorParams, TransformParams,
};
use crate::CliError;

/// Artifact directory that remembers what was written.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), CliError> {
        let mut wtr = csv::Writer::from_writer(self.create(name)?);
        for r in rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn basis(a: &PeriodicCoefficient, numerics: &Numerics) -> Result<PlaneWaveBasis, CliError> {
    Ok(PlaneWaveBasis::new(a.dim(), numerics.cutoff)?)
}

pub fn bands(a: &PeriodicCoefficient, n: &Numerics, p: &BandsParams, out: &mut Outputs) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let band = band_sweep(a, &b, p.rho, &eta_grid(a.dim(), p.eta_points), p.modes)?;
    write_band_csv(&band, out.create("bands.csv")?)?;
    Ok(())
}

#[derive(Serialize)]
struct CellSummary<'a> {
    rho: f64,
    weak_residual: f64,
    energies: &'a [blochhom::cell::CorrectorEnergy],
    tensor: HomogenizedTensor,
}

pub fn cell(a: &PeriodicCoefficient, n: &Numerics, p: &CellParams, out: &mut Outputs) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let set = solve_cell(a, &b, p.rho)?;
    write_corrector_csv(&set, out.create("correctors.csv")?)?;
    out.json(
        "cell.json",
        &CellSummary {
            rho: p.rho,
            weak_residual: set.weak_residual,
            energies: &set.energies,
            tensor: blochhom::tensor::tensor_from_correctors(a, &set),
        },
    )
}

#[derive(Serialize)]
struct RouteComparison {
    rho: f64,
    max_pairwise_relative: f64,
}

#[derive(Serialize)]
struct TensorSummary {
    comparisons: Vec<RouteComparison>,
    regimes: Vec<HomogenizedTensor>,
}

fn max_pairwise(ts: &[HomogenizedTensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, x) in ts.iter().enumerate() {
        for y in &ts[i + 1..] {
            worst = worst.max(x.relative_difference(y));
        }
    }
    worst
}

pub fn tensor(a: &PeriodicCoefficient, n: &Numerics, p: &TensorParams, out: &mut Outputs) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let mut all = Vec::new();
    let mut comparisons = Vec::new();
    for &rho in &p.rho_list {
        let mut ts = vec![tensor_from_cell(a, &b, rho)?];
        if p.hessian {
            ts.push(tensor_from_hessian(a, &b, rho, n.fd_step)?);
        }
        let op = CellOperator::new(a, &b, rho)?;
        ts.push(derivative_recursion_with(&op, a, 2)?.tensor());
        if let Some(cut) = p.matrix_free_cutoff {
            ts.push(tensor_from_cell_matrix_free(a, cut, rho)?.0);
        }
        comparisons.push(RouteComparison {
            rho,
            max_pairwise_relative: max_pairwise(&ts),
        });
        all.extend(ts);
    }
    write_tensor_csv(&all, out.create("tensors.csv")?)?;
    let regimes = [Regime::Zero, Regime::Infinity]
        .into_iter()
        .map(|r| regime_tensor(a, &b, r))
        .collect::<blochhom::Result<Vec<_>>>()?;
    out.json("tensor.json", &TensorSummary { comparisons, regimes })
}

pub fn derivs(a: &PeriodicCoefficient, n: &Numerics, p: &DerivsParams, out: &mut Outputs) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let op = CellOperator::new(a, &b, p.rho)?;
    let table = derivative_recursion_with(&op, a, p.max_order)?;
    let mut doc = table.to_json();
    if p.max_order >= 2 {
        let cell = tensor_from_cell(a, &b, p.rho)?;
        doc["hessian_cross_check"] = serde_json::to_value(cross_check_hessian(&table, &cell))?;
    }
    if p.max_order >= 1 {
        let chi = correctors_for(&op, a)?;
        let v: Vec<f64> = chi
            .iter()
            .enumerate()
            .map(|(j, c)| corrector_relation_variance(&table, c, j))
            .collect();
        doc["corrector_relation_variance"] = serde_json::to_value(v)?;
    }
    doc["odd_order_defect"] = serde_json::to_value(table.odd_order_defect())?;
    out.json("derivs.json", &doc)
}

#[derive(Serialize)]
struct StabilityCsvRow {
    rho: f64,
    to_mean: f64,
    to_classical: f64,
    margin_below: f64,
    margin_above: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    top_decade_slope: f64,
    full_slope: f64,
    smallest_rho_gap: f64,
    uniform_slopes: Option<serde_json::Value>,
}

pub fn sweep_rho(
    a: &PeriodicCoefficient,
    n: &Numerics,
    p: &SweepRhoParams,
    out: &mut Outputs,
) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let rep = stability_sweep(a, &b, &p.rho_list)?;
    let rows: Vec<StabilityCsvRow> = rep
        .rows
        .iter()
        .map(|r| StabilityCsvRow {
            rho: r.rho,
            to_mean: r.to_mean,
            to_classical: r.to_classical,
            margin_below: r.margin_below,
            margin_above: r.margin_above,
        })
        .collect();
    out.csv("stability.csv", &rows)?;
    let positive: Vec<(f64, f64)> = rep
        .rows
        .iter()
        .filter(|r| r.rho > 0.0 && r.to_mean > 0.0)
        .map(|r| (r.rho, r.to_mean))
        .collect();
    let full_slope = if positive.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        blochhom::linalg::loglog_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let uniform_slopes = if p.uniform {
        let u = uniform_estimate_sweep(a, &b, &p.rho_list)?;
        out.csv("uniform.csv", &u.rows)?;
        Some(serde_json::json!({
            "first_phi": u.slope_first_phi,
            "second_phi": u.slope_second_phi,
            "second_lambda_gap": u.slope_second_lambda_gap,
            "third_phi": u.slope_third_phi,
            "fourth_phi": u.slope_fourth_phi,
            "fourth_lambda": u.slope_fourth_lambda,
        }))
    } else {
        None
    };
    out.json(
        "sweep.json",
        &SweepSummary {
            top_decade_slope: rep.top_decade_slope,
            full_slope,
            smallest_rho_gap: rep.smallest_rho_gap,
            uniform_slopes,
        },
    )
}

/// `cos x₁` in `d` dimensions.
pub fn default_forcing(dim: usize) -> TrigForcing {
    let mut k = vec![0; dim];
    k[0] = 1;
    TrigForcing::cosines(dim, &[(k, 1.0)])
}

#[derive(Serialize)]
struct SupercellSummary {
    regime: Regime,
    tensor: Vec<f64>,
    higher_mode_slope: f64,
    l2_strictly_decreasing: bool,
    rows: Vec<blochhom::supercell::ConvergenceRow>,
    identities: Option<serde_json::Value>,
}

pub fn supercell(
    a: &PeriodicCoefficient,
    n: &Numerics,
    p: &SupercellParams,
    seed: u64,
    out: &mut Outputs,
) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let r = regime(p.regime, p.theta)?;
    let law = kappa_law(r, p.kappa.as_ref());
    let forcing = p.forcing.clone().unwrap_or_else(|| default_forcing(a.dim()));
    let contrast = match p.contrast {
        Some(c) => Some(regime_tensor(a, &b, regime(c, p.contrast_theta)?)?),
        None => None,
    };
    let table = homogenization_experiment(a, &b, &forcing, r, &law, &p.epsilons, contrast.as_ref())?;
    write_convergence_csv(&table, out.create("convergence.csv")?)?;
    let identities = if p.identity_check {
        let eps = p.epsilons.iter().cloned().fold(0.0, f64::max);
        let cells = (1.0 / eps).round() as usize;
        let kappa = law.kappas(&[eps])?[0];
        let sp = SupercellProblem::new(a.clone(), b.clone(), eps, cells, kappa)?;
        let width = sp.points_per_axis() as f64 / 8.0;
        let f = smooth_random_function(&sp, width, seed)?;
        let g = smooth_random_function(&sp, width, seed.wrapping_add(1))?;
        Some(serde_json::json!({
            "epsilon": eps,
            "cells": cells,
            "kappa": kappa,
            "identities": identity_check(&sp, &f, &g)?,
            "diagonalization": diagonalization_check(&sp, &f)?,
        }))
    } else {
        None
    };
    out.json(
        "supercell.json",
        &SupercellSummary {
            regime: r,
            l2_strictly_decreasing: table.l2_strictly_decreasing(),
            tensor: table.tensor,
            higher_mode_slope: table.higher_mode_slope,
            rows: table.rows,
            identities,
        },
    )
}

pub fn transform_limit(
    a: &PeriodicCoefficient,
    n: &Numerics,
    p: &TransformParams,
    out: &mut Outputs,
) -> Result<(), CliError> {
    let b = basis(a, n)?;
    let r = regime(p.regime, p.theta)?;
    let law = kappa_law(r, p.kappa.as_ref());
    let g = GaussianProfile {
        sigma: p.sigma,
        modulation: p.modulation,
    };
    let rep = transform_to_fourier_limit(a, &b, &g, r, &law, &p.epsilons, p.span, p.window)?;
    out.csv("transform_limit.csv", &rep.rows)?;
    out.json("transform_limit.json", &rep)
}

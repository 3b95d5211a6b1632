mod common;

use blochhom::fiber::{read_matrix_dump, write_matrix_dump};
use blochhom::spectra::{eta_grid, write_band_csv};
use blochhom::supercell::{write_convergence_csv, KappaLaw, TrigForcing};
use blochhom::tensor::{tensor_from_cell, write_tensor_csv};
use blochhom::*;
use common::laminate;

fn parse(bytes: &[u8]) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().unwrap().clone();
    (header, rdr.records().map(|r| r.unwrap()).collect())
}

#[test]
fn band_csv_reproduces_identity_symbol() {
    let a = PeriodicCoefficient::identity(2);
    let basis = PlaneWaveBasis::new(2, 3).unwrap();
    let rho = 0.7;
    let band = band_sweep(&a, &basis, rho, &eta_grid(2, 4), 2).unwrap();
    let mut buf = Vec::new();
    write_band_csv(&band, &mut buf).unwrap();
    let (header, rows) = parse(&buf);
    assert_eq!(header.iter().collect::<Vec<_>>(), ["eta_1", "eta_2", "m", "lambda", "gauge_residual"]);
    assert_eq!(rows.len(), 16 * 2);
    for r in rows.iter().filter(|r| &r[2] == "1") {
        let e1: f64 = r[0].parse().unwrap();
        let e2: f64 = r[1].parse().unwrap();
        let l: f64 = r[3].parse().unwrap();
        let q = e1 * e1 + e2 * e2;
        assert!((l - (q + rho * rho * q * q)).abs() < 1e-12);
    }
}

#[test]
fn matrix_dump_roundtrip() {
    let a = laminate(33);
    let basis = PlaneWaveBasis::new(1, 5).unwrap();
    let f = assemble_fiber(&a, &basis, 1.5, &[0.2]).unwrap();
    let mut buf = Vec::new();
    write_matrix_dump(&f, &mut buf).unwrap();
    assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 11 * 11 * 16);
    let dump = read_matrix_dump(&mut buf.as_slice()).unwrap();
    assert_eq!((dump.dim, dump.cutoff, dump.rho, dump.eta.clone()), (1, 5, 1.5, vec![0.2]));
    for i in 0..11 {
        for j in 0..11 {
            assert_eq!(dump.entries[i * 11 + j], f.entry(i, j));
        }
    }
    assert!(read_matrix_dump(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn tensor_and_convergence_csv_layout() {
    let a = laminate(65);
    let basis = PlaneWaveBasis::new(1, 8).unwrap();
    let t = tensor_from_cell(&a, &basis, 1.0).unwrap();
    let mut buf = Vec::new();
    write_tensor_csv([&t], &mut buf).unwrap();
    let (header, rows) = parse(&buf);
    assert_eq!(header.iter().collect::<Vec<_>>(), ["route", "rho", "k", "l", "value"]);
    assert_eq!(&rows[0][0], "cell-average");
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), t.get(0, 0));

    let forcing = TrigForcing::cosines(1, &[(vec![1], 1.0)]);
    let table = homogenization_experiment(
        &a,
        &basis,
        &forcing,
        Regime::Theta(1.0),
        &KappaLaw::Linear(1.0),
        &[0.5, 0.25],
        None,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_convergence_csv(&table, &mut buf).unwrap();
    let (header, rows) = parse(&buf);
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["epsilon", "kappa", "regime", "l2_error", "flux_weak_error", "higher_mode_norm"]
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][2], "theta(1)");
}

#[test]
fn derivative_table_json_is_keyed_by_multi_index() {
    let a = laminate(65);
    let t = derivative_recursion(&a, &PlaneWaveBasis::new(1, 8).unwrap(), 1.0, 4).unwrap();
    let v = t.to_json();
    let entries = v["entries"].as_object().unwrap();
    let keys: Vec<&String> = entries.keys().collect();
    for k in ["0", "e1", "e1+e1", "e1+e1+e1", "e1+e1+e1+e1"] {
        assert!(keys.iter().any(|x| *x == k), "missing {k}");
    }
    let l2 = &entries["e1+e1"]["lambda"];
    assert_eq!(l2[0].as_f64().unwrap(), t.lambda(&MultiIndex::from_axes(1, &[0, 0])).re);
    assert_eq!(entries["e1"]["phi"].as_array().unwrap().len(), 17);
}

#[test]
fn coefficient_description_roundtrip() {
    let desc = CoefficientDescription::laminate([1.0, 4.0], 0.5, 65);
    let text = serde_json::to_string(&desc).unwrap();
    let back = CoefficientDescription::from_json_str(&text).unwrap();
    let (a, b) = (load_coefficient(&desc).unwrap(), load_coefficient(&back).unwrap());
    assert_eq!(a.samples(), b.samples());
    let bad = text.replace("\"dim\"", "\"dimension\"");
    assert!(CoefficientDescription::from_json_str(&bad).is_err());
}

use blochhom::supercell::smooth_random_function;
use blochhom::*;
use blochhom_bench::{laminate, trig2};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn fiber(c: &mut Criterion) {
    let mut g = c.benchmark_group("fiber");
    let a = laminate(257);
    for n in [16usize, 32, 64] {
        let basis = PlaneWaveBasis::new(1, n).unwrap();
        g.bench_with_input(BenchmarkId::new("assemble_1d", n), &basis, |b, basis| {
            b.iter(|| assemble_fiber(&a, basis, 1.0, &[0.25]).unwrap())
        });
        let f = assemble_fiber(&a, &basis, 1.0, &[0.25]).unwrap();
        g.bench_with_input(BenchmarkId::new("solve_1d", n), &f, |b, f| {
            b.iter(|| solve_fiber(black_box(f), 3).unwrap())
        });
    }
    let a2 = trig2(33);
    let basis = PlaneWaveBasis::new(2, 6).unwrap();
    g.bench_function("assemble_2d_n6", |b| {
        b.iter(|| assemble_fiber(&a2, &basis, 1.0, &[0.1, -0.2]).unwrap())
    });
    g.finish();
}

fn cell(c: &mut Criterion) {
    let mut g = c.benchmark_group("cell");
    let a = laminate(257);
    let basis = PlaneWaveBasis::new(1, 64).unwrap();
    g.bench_function("solve_1d_n64", |b| b.iter(|| solve_cell(&a, &basis, 1.0).unwrap()));
    let a2 = trig2(33);
    let basis2 = PlaneWaveBasis::new(2, 8).unwrap();
    g.bench_function("solve_2d_n8", |b| b.iter(|| solve_cell(&a2, &basis2, 1.0).unwrap()));
    g.bench_function("matrix_free_1d_4096", |b| {
        b.iter(|| tensor_from_cell_matrix_free(&a, 4096, 1.0).unwrap())
    });
    g.finish();
}

fn recursion(c: &mut Criterion) {
    let mut g = c.benchmark_group("derivs");
    let a = laminate(257);
    let basis = PlaneWaveBasis::new(1, 32).unwrap();
    for order in [2usize, 4] {
        g.bench_with_input(BenchmarkId::new("recursion_1d", order), &order, |b, &k| {
            b.iter(|| derivative_recursion(&a, &basis, 1.0, k).unwrap())
        });
    }
    let a2 = trig2(33);
    let basis2 = PlaneWaveBasis::new(2, 6).unwrap();
    g.bench_function("recursion_2d_order4", |b| {
        b.iter(|| derivative_recursion(&a2, &basis2, 1.0, 4).unwrap())
    });
    g.finish();
}

fn supercell(c: &mut Criterion) {
    let mut g = c.benchmark_group("supercell");
    g.sample_size(10);
    let a = laminate(129);
    let basis = PlaneWaveBasis::new(1, 16).unwrap();
    for cells in [8usize, 32] {
        let eps = 1.0 / cells as f64;
        let p = SupercellProblem::new(a.clone(), basis.clone(), eps, cells, eps).unwrap();
        let f = smooth_random_function(&p, p.points_per_axis() as f64 / 8.0, 1).unwrap();
        g.bench_with_input(BenchmarkId::new("bloch_transform", cells), &(p, f), |b, (p, f)| {
            b.iter(|| bloch_transform(p, f, 4).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fiber, cell, recursion, supercell);
criterion_main!(benches);

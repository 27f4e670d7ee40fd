use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use driftrack::linalg::{ar_polynomial_roots, ard_conditional, ard_quadratic_matrix, kl_gaussians, sym_eigen, Matrix};

fn spd(d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 0.5 } else { 0.0 });
    &g * g.transpose() + Matrix::identity(d, d)
}

fn linalg(c: &mut Criterion) {
    let mut g = c.benchmark_group("jacobi_eigen");
    for d in [2usize, 4, 16] {
        let m = spd(d);
        g.bench_with_input(BenchmarkId::from_parameter(d), &m, |b, m| b.iter(|| sym_eigen(black_box(m)).unwrap()));
    }
    g.finish();

    let theta = [0.4, -0.2, 0.1, 0.05];
    let other = [0.3, -0.1, 0.15, 0.0];
    let y = [1.0, -2.0, 0.5, 3.0];
    c.bench_function("ard_quadratic_matrix_d4", |b| {
        b.iter(|| ard_quadratic_matrix(black_box(&theta), black_box(&y), 1.0).unwrap())
    });
    let (m0, s0) = ard_conditional(&theta, &y, 1.0);
    let (m1, s1) = ard_conditional(&other, &y, 1.0);
    c.bench_function("kl_gaussians_d4", |b| b.iter(|| kl_gaussians(black_box(&m0), &s0, &m1, &s1).unwrap()));
    c.bench_function("ar_polynomial_roots_d4", |b| b.iter(|| ar_polynomial_roots(black_box(&theta)).unwrap()));
}

criterion_group!(benches, linalg);
criterion_main!(benches);

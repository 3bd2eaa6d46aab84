use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gc_bench::random_costs;
use gc_core::matching::{solve_assignment, CostMatrix};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("lsap_solve");
    for k in [8usize, 16, 32, 64, 128] {
        let costs = CostMatrix::new(k, random_costs(k, k as u64)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &costs, |b, costs| {
            b.iter(|| solve_assignment(std::hint::black_box(costs)).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_solve);
criterion_main!(benches);

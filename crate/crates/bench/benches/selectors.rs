use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowknn::eval::random_input;
use flowknn::{select, ExecMode, SelectorKind};

fn selectors(c: &mut Criterion) {
    let mut group = c.benchmark_group("select");
    for n in [1_000usize, 4_000] {
        let input = random_input(n, n as u64);
        for kind in SelectorKind::ALL {
            group.bench_with_input(BenchmarkId::new(kind.as_str(), n), &input, |b, input| {
                b.iter(|| select(kind, black_box(input), 5, ExecMode::Sequential).unwrap())
            });
        }
    }
    group.finish();
}

fn partial_selectors_at_scale(c: &mut Criterion) {
    let n = 18_000;
    let input = random_input(n, 7);
    let mut group = c.benchmark_group("select_18k");
    for kind in [
        SelectorKind::KMin,
        SelectorKind::Bubble,
        SelectorKind::Merge,
    ] {
        for k in [1usize, 5, 15] {
            group.bench_with_input(BenchmarkId::new(kind.as_str(), k), &k, |b, &k| {
                b.iter(|| select(kind, black_box(&input), k, ExecMode::Sequential).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, selectors, partial_selectors_at_scale);
criterion_main!(benches);

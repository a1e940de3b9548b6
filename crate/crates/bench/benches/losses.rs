use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dspt_bench::logits;
use dspt_core::numerics::{double_softmax, softmax};
use dspt_core::LossKind;

fn loss_eval(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_eval");
    for classes in [10, 100, 1000] {
        let z = logits(classes, 8.0);
        for kind in [LossKind::Ce, LossKind::Dspt] {
            g.bench_with_input(BenchmarkId::new(kind.to_string(), classes), &z, |b, z| {
                b.iter(|| kind.eval(black_box(z), 1).unwrap())
            });
        }
    }
    g.finish();
}

fn softmaxes(c: &mut Criterion) {
    let mut g = c.benchmark_group("softmax");
    for classes in [10, 1000] {
        let z = logits(classes, 8.0);
        g.bench_with_input(BenchmarkId::new("single", classes), &z, |b, z| {
            b.iter(|| softmax(black_box(z)))
        });
        g.bench_with_input(BenchmarkId::new("double", classes), &z, |b, z| {
            b.iter(|| double_softmax(black_box(z)))
        });
    }
    g.finish();
}

criterion_group!(benches, loss_eval, softmaxes);
criterion_main!(benches);

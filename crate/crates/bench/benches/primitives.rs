use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cutlayer_core::nd::{Mlp, MlpSpec};
use cutlayer_core::rng::{stream, Stream};
use cutlayer_core::stats::{distance_correlation, LabelEncoding};
use cutlayer_core::{Tape, Tensor2};

fn features(n: usize, d: usize) -> Tensor2 {
    Tensor2::from_fn(n, d, |r, c| ((r * 31 + c * 7) as f64 * 0.113).sin())
}

fn dcor(c: &mut Criterion) {
    let mut group = c.benchmark_group("distance_correlation");
    for n in [64, 256] {
        let x = features(n, 10);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y = LabelEncoding::one_hot(2).encode(&labels).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| distance_correlation(&x, &y).unwrap())
        });
    }
    group.finish();
}

fn tape_mlp(c: &mut Criterion) {
    let spec = MlpSpec::relu(&[20, 32, 10]).unwrap();
    let mlp = Mlp::init(&spec, &mut stream(0, Stream::ClientInit)).unwrap();
    let x = features(64, 20);
    let labels: Vec<usize> = (0..64).map(|i| i % 10).collect();
    c.bench_function("tape_forward_backward_64x20", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = mlp.bind(&mut tape);
            let xi = tape.leaf(x.clone());
            let out = mlp.forward(&bound, &mut tape, xi).unwrap();
            let loss = tape.softmax_cross_entropy(out, &labels).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

criterion_group!(benches, dcor, tape_mlp);
criterion_main!(benches);

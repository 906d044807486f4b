use attrleak_core::explain::{explain_many, ExplainContext, ExplainerKind, ExplainerParams};
use attrleak_core::nn::{LayerSpec, Network};
use attrleak_core::par::Execution;
use attrleak_core::rng::rng_from_seed;
use attrleak_core::utility::{dataset_sensitivity, SensitivityEstimator};
use attrleak_core::Tensor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

fn network() -> Network {
    let layers = vec![
        LayerSpec::Dense { input: 32, output: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { input: 64, output: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { input: 64, output: 10 },
    ];
    Network::init(&[32], layers, &mut rng_from_seed(1)).unwrap()
}

fn inputs(n: usize) -> (Vec<Tensor>, Vec<usize>) {
    let mut rng = rng_from_seed(2);
    let xs = (0..n)
        .map(|_| Tensor::vector((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    (xs, (0..n).map(|i| i % 10).collect())
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench_explain(c: &mut Criterion) {
    let net = network();
    let ctx = ExplainContext::new(&net);
    let (xs, cls) = inputs(256);
    let mut g = c.benchmark_group("explain_many_smoothgrad");
    let p = ExplainerParams::defaults(ExplainerKind::Smoothgrad);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| explain_many(&ctx, ExplainerKind::Smoothgrad, &p, &xs, &cls, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_sensitivity(c: &mut Criterion) {
    let net = network();
    let ctx = ExplainContext::new(&net);
    let (xs, cls) = inputs(64);
    let mut g = c.benchmark_group("dataset_sensitivity_saliency");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                dataset_sensitivity(
                    &ctx,
                    ExplainerKind::Saliency,
                    &ExplainerParams::new(),
                    &xs,
                    &cls,
                    0.1,
                    SensitivityEstimator::default(),
                    3,
                    exec,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_explain, bench_sensitivity
}
criterion_main!(benches);

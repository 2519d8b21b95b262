//! Sequential vs data-parallel execution of the two hot loops: one batch of
//! forward/backward passes, and a full evaluation pass.
//!
//! "sequential" runs inside a one-thread pool, which takes the in-order
//! fallback path; "parallel" uses a pool with every available core. Build
//! with `--no-default-features` to compile the fallback only.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;
use uschema::aggregation::AggregatorKind;
use uschema::data::{generate_synthetic, split_dataset, DatasetSplit, SplitRatios, SynthSpec, Vocabulary};
use uschema::evaluation::{evaluate, EvalProtocol, Universe};
use uschema::loss::LossConfig;
use uschema::model::{init_model, EncoderKind, Model, ModelConfig};
use uschema::training::batch_gradients;

struct Fixture {
    vocab: Vocabulary,
    split: DatasetSplit,
}

fn fixture() -> Fixture {
    let (vocab, triples, _) = generate_synthetic(&SynthSpec::new(400, 60, 4, 0.05, 1)).unwrap();
    let split = split_dataset(&vocab, &triples, SplitRatios::default(), 1).unwrap();
    Fixture { vocab, split }
}

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()),
    ]
}

fn model(f: &Fixture, encoder: EncoderKind) -> Model {
    let cfg = ModelConfig {
        encoder,
        token_dim: 16,
        ..ModelConfig::new(25, AggregatorKind::Attention)
    };
    init_model(&cfg, &f.vocab, vec![], 1, None).unwrap()
}

fn bench_batch(c: &mut Criterion) {
    let f = fixture();
    let loss = LossConfig::default();
    let batch = &f.split.train[..f.split.train.len().min(512)];
    let mut group = c.benchmark_group("batch_gradients");
    for encoder in [EncoderKind::Lookup, EncoderKind::Lstm] {
        let m = model(&f, encoder);
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, encoder), &m, |b, m| {
                b.iter(|| pool.install(|| batch_gradients(m, &f.split, batch, &loss, Some(10.0), 0, 0, 0).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let f = fixture();
    let universe = Universe::new(&f.vocab, &f.split);
    let m = model(&f, EncoderKind::Lookup);
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for protocol in [EvalProtocol::type_map(0), EvalProtocol::relation_rank(0)] {
        for (name, pool) in pools() {
            group.bench_function(BenchmarkId::new(name, protocol.mode), |b| {
                b.iter(|| pool.install(|| evaluate(&m, &f.split, &universe, &protocol, &f.split.test).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_batch, bench_evaluate);
criterion_main!(benches);

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use anomalygen_bench::{fixture_dir, seeded_graph};
use anomalygen_core::callgraph::{prune, tag_from_direct};
use anomalygen_core::label::krippendorff_alpha;
use anomalygen_core::pipeline::{Pipeline, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pruning(c: &mut Criterion) {
    let (graph, direct) = seeded_graph(1, 200, 600, 0.1);
    c.bench_function("tag+prune 200 nodes / 600 edges", |b| {
        b.iter(|| prune(&tag_from_direct(black_box(&graph), black_box(&direct))))
    });
    let (big, big_direct) = seeded_graph(2, 20_000, 60_000, 0.05);
    c.bench_function("tag+prune 20k nodes / 60k edges", |b| {
        b.iter(|| prune(&tag_from_direct(black_box(&big), black_box(&big_direct))))
    });
}

fn full_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("fixture");
    group.sample_size(10);
    group.bench_function("run all stages", |b| {
        b.iter_batched(
            || tempfile::tempdir().expect("tempdir"),
            |out| {
                let config = PipelineConfig {
                    corpus: vec![fixture_dir()],
                    output: out.path().to_path_buf(),
                    ..PipelineConfig::default()
                };
                Pipeline::new(config).expect("config").run().expect("run");
                out
            },
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

fn agreement(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cells: Vec<Vec<Option<bool>>> = (0..10_000).map(|_| (0..3).map(|_| Some(rng.gen_bool(0.5))).collect()).collect();
    c.bench_function("alpha 10k items x 3 coders", |b| b.iter(|| krippendorff_alpha(black_box(&cells))));
}

criterion_group!(benches, pruning, full_pipeline, agreement);
criterion_main!(benches);

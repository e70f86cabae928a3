use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgvqa::config::RunConfig;
use sgvqa::perturb::{corrupt, filter, CorruptionSpec, FilterSpec};
use sgvqa::pipeline::Prepared;
use sgvqa::world::{generate_mini_world, MiniWorldSpec};

fn world(c: &mut Criterion) {
    let spec = MiniWorldSpec {
        scenes: 100,
        ..MiniWorldSpec::default()
    };
    c.bench_function("mini_world_100_scenes", |b| b.iter(|| generate_mini_world(&spec, 7).unwrap()));
}

fn perturbations(c: &mut Criterion) {
    let mut config = RunConfig::default();
    config.world.scenes = 50;
    let prepared = Prepared::from_config(&config, 3).unwrap();
    let noisy: Vec<_> = prepared.dataset.noisy.values().cloned().collect();
    let gt: Vec<_> = prepared.dataset.graphs.values().cloned().collect();
    let spec = FilterSpec {
        k_objects: 4,
        k_relations: 6,
        ..FilterSpec::default()
    };
    c.bench_function("filter_top_k_50_graphs", |b| {
        b.iter(|| noisy.iter().map(|g| filter(g, &spec).unwrap().node_count()).sum::<usize>())
    });
    c.bench_function("corrupt_0.4_50_graphs", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(1),
            |mut rng| {
                gt.iter()
                    .map(|g| corrupt(g, CorruptionSpec { level: 0.4 }, &mut rng).unwrap().edge_count())
                    .sum::<usize>()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, world, perturbations);
criterion_main!(benches);

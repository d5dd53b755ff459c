//! Sequential vs rayon-parallel inference. On a single core the two should
//! match; the gap grows with the worker count.

use std::hint::black_box;

use builtup::model::{ArchitectureConfig, Model};
use builtup::pipeline::{predict_zone, ZoneImage};
use builtup::synth::{synth_zone, SceneParams};
use builtup::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn strategies() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel { workers: 0 })]
}

fn scene() -> ZoneImage {
    let scene = synth_zone(&SceneParams {
        width: 128,
        height: 128,
        tile_pixels: 32,
        clusters: 3,
        buildings_per_cluster: 10,
        ..SceneParams::default()
    })
    .expect("bench scene");
    ZoneImage::from_scene(&scene, 10_000.0).expect("bench image")
}

fn forward_batch(c: &mut Criterion) {
    let model = Model::new(&ArchitectureConfig::desk(), "bench", 1).unwrap();
    let image = scene();
    let centres: Vec<(usize, usize)> = (0..64).flat_map(|r| (0..128).map(move |c| (r, c))).collect();
    let batch = image.source.batch(centres.iter().copied()).unwrap();
    let mut group = c.benchmark_group("forward_batch");
    group.throughput(Throughput::Elements(centres.len() as u64));
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.forward_batch_with(&batch, exec).unwrap()))
        });
    }
    group.finish();
}

fn zone_prediction(c: &mut Criterion) {
    let model = Model::new(&ArchitectureConfig::desk(), "bench", 1).unwrap();
    let image = scene();
    let mut group = c.benchmark_group("predict_zone");
    group.sample_size(10);
    group.throughput(Throughput::Elements((image.meta.width * image.meta.height) as u64));
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(predict_zone(&model, &image, exec)))
        });
    }
    group.finish();
}

criterion_group!(benches, forward_batch, zone_prediction);
criterion_main!(benches);

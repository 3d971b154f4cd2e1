use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use segtrack::exec::{derive_seed, map_indexed, map_indexed_seq};
use segtrack::net::{init_params, NetConfig};
use segtrack::pipeline::Embedder;
use segtrack::pointcloud::{Ablation, SamplerConfig};
use segtrack::raster::Frame;
use segtrack::synth::{simulate, WorldConfig};

fn scene() -> (Vec<Frame>, Vec<segtrack::mask::InstanceObservation>) {
    let cfg = WorldConfig {
        frames: 4,
        min_objects: 10,
        max_objects: 12,
        ..Default::default()
    };
    let g = simulate(&cfg, "bench", 3).unwrap();
    let frames = g.frames.into_iter().map(|(image, classes)| Frame { image, classes }).collect();
    (frames, g.instances)
}

fn embedding(c: &mut Criterion) {
    let (frames, inst) = scene();
    let params = init_params(0, &NetConfig::standard(3));
    let sampler = SamplerConfig {
        n_fg: 500,
        n_env: 250,
        ..Default::default()
    };
    let e = Embedder::new(&params, sampler, Ablation::NONE).unwrap();
    let one = |i: usize, o: &segtrack::mask::InstanceObservation| {
        e.embed_instance(&frames[o.frame_index as usize], o, derive_seed(1, &[i as u64])).unwrap()
    };
    let mut g = c.benchmark_group("embed_instances");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(&inst, one))));
    g.bench_function("rayon", |b| b.iter(|| black_box(map_indexed(&inst, one))));
    g.finish();
}

fn iou_matrix(c: &mut Criterion) {
    let (_, inst) = scene();
    let row = |_: usize, a: &segtrack::mask::InstanceObservation| {
        inst.iter().map(|b| a.mask.iou(&b.mask).unwrap()).collect::<Vec<f64>>()
    };
    let mut g = c.benchmark_group("iou_matrix");
    g.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(&inst, row))));
    g.bench_function("rayon", |b| b.iter(|| black_box(map_indexed(&inst, row))));
    g.finish();
}

criterion_group!(benches, embedding, iou_matrix);
criterion_main!(benches);

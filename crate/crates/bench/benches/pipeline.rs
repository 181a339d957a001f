use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tablegraph_bench::{labeled, pages};
use tablegraph_core::features::assemble_features;
use tablegraph_core::geometry::{assign_reading_order, build_neighbor_graph, GraphConfig, LINE_OVERLAP_THRESHOLD};
use tablegraph_core::network::{predict, Model, ModelConfig};

fn geometry(c: &mut Criterion) {
    let page = pages(1, 7).remove(0);
    let mut group = c.benchmark_group("geometry");
    group.throughput(Throughput::Elements(page.len() as u64));
    for n in [1, 3] {
        group.bench_with_input(BenchmarkId::new("neighbor_graph", n), &n, |b, &n| {
            b.iter(|| build_neighbor_graph(black_box(&page), GraphConfig { n_neighbors: n }))
        });
    }
    group.bench_function("reading_order", |b| {
        b.iter(|| assign_reading_order(black_box(&page), LINE_OVERLAP_THRESHOLD))
    });
    let order = assign_reading_order(&page, LINE_OVERLAP_THRESHOLD);
    group.bench_function("features", |b| b.iter(|| assemble_features(black_box(&page), &order)));
    group.finish();
}

fn forward(c: &mut Criterion) {
    let set = labeled(8, 7, 1);
    let boxes: usize = set.iter().map(|e| e.len()).sum();
    let model = Model::init(ModelConfig { class_count: 12, ..ModelConfig::default() }, 0).unwrap();
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.throughput(Throughput::Elements(boxes as u64));
    group.bench_function("forward_8_pages", |b| b.iter(|| predict(&model, black_box(&set), 8).unwrap()));
    group.finish();
}

criterion_group!(benches, geometry, forward);
criterion_main!(benches);

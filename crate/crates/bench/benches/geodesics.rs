use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

use skillprobe_bench::world;

fn all_pairs(c: &mut Criterion) {
    let mut group = c.benchmark_group("geodesics_all_pairs");
    for n in [50, 200] {
        let w = world(1, n);
        let ids: Vec<String> = w.nodes().iter().map(|n| n.id.clone()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            // a fresh world each batch so memoized rows are recomputed
            b.iter_batched(
                || world(1, n),
                |w| {
                    let mut sum = 0.0;
                    for a in &ids {
                        for b in &ids {
                            sum += w.geodesic_distance(a, b).unwrap();
                        }
                    }
                    sum
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn nearest_room(c: &mut Criterion) {
    let w = world(2, 200);
    let ids: Vec<String> = w.nodes().iter().map(|n| n.id.clone()).collect();
    let room = w.room_type(&ids[0]).unwrap().to_owned();
    c.bench_function("nearest_node_with_room_200", |b| {
        b.iter(|| ids.iter().filter_map(|id| w.nearest_node_with_room(id, &room).unwrap()).count())
    });
}

criterion_group!(benches, all_pairs, nearest_room);
criterion_main!(benches);

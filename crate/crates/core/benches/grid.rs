use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use himm_core::geometry::{Point2, Pose};
use himm_core::par::Execution;
use himm_core::physical_space::{extract_frontiers, render_retrieved_poses_with, CellState, OccupancyGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn executions() -> Vec<(&'static str, Execution)> {
    let mut v = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Execution::Parallel));
    v
}

// Scattered free blobs in unknown space: many small frontiers.
fn speckled(side: usize, seed: u64) -> OccupancyGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![CellState::Unknown; side * side];
    for _ in 0..side * side / 40 {
        let (x, y) = (rng.random_range(1..side - 3), rng.random_range(1..side - 3));
        for dy in 0..2 {
            for dx in 0..2 {
                cells[(y + dy) * side + x + dx] = CellState::Free;
            }
        }
    }
    OccupancyGrid::from_cells(0.05, Point2::new(0.0, 0.0), side, side, cells).expect("valid grid")
}

fn annotate(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_retrieved_poses");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for side in [128usize, 256] {
        let grid = speckled(side, 3);
        let frontiers = extract_frontiers(&grid, 10);
        let extent = side as f64 * 0.05;
        let poses: Vec<Pose> = (0..2_000)
            .map(|_| Pose::planar(rng.random_range(0.0..extent), rng.random_range(0.0..extent), 0.0))
            .collect();
        let agent = Pose::planar(extent / 2.0, extent / 2.0, 0.0);
        for (name, exec) in executions() {
            group.bench_with_input(BenchmarkId::new(name, frontiers.len()), &side, |b, _| {
                b.iter(|| {
                    render_retrieved_poses_with(
                        grid.clone(),
                        black_box(poses.clone()),
                        agent,
                        black_box(frontiers.clone()),
                        exec,
                    )
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, annotate);
criterion_main!(benches);

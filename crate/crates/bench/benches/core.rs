use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use featreplay_bench::{engine_after_first_task, normal_matrix};
use featreplay_core::autodiff::Graph;
use featreplay_core::continual::{train_task, ReplayMode};
use featreplay_core::metrics::frechet_gaussian;
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let a = normal_matrix(64, 64, 1);
    let b = normal_matrix(64, 64, 2);
    c.bench_function("matmul_64_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let av = g.constant(a.clone());
            let bv = g.constant(b.clone());
            let p = g.matmul(av, bv);
            let s = g.sum(p);
            black_box(g.backward(s).unwrap());
        })
    });
}

fn training_step(c: &mut Criterion) {
    for (name, mode, alpha) in [
        ("step_none", ReplayMode::None, None),
        ("step_align_image", ReplayMode::AlignImage, None),
        ("step_align_feature", ReplayMode::AlignFeature, None),
        ("step_align_combined", ReplayMode::AlignCombined, Some(0.5)),
    ] {
        let (state, stream) = engine_after_first_task(mode, alpha);
        c.bench_function(name, |bench| {
            bench.iter_batched(
                || state.clone(),
                |mut st| black_box(train_task(&mut st, &stream).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
}

fn frechet(c: &mut Criterion) {
    for dim in [2, 64] {
        let a = normal_matrix(2000, dim, 3);
        let b = normal_matrix(2000, dim, 4);
        c.bench_function(&format!("frechet_2000x{dim}"), |bench| {
            bench.iter(|| black_box(frechet_gaussian(&a, &b).unwrap()))
        });
    }
}

criterion_group!(benches, matmul, training_step, frechet);
criterion_main!(benches);

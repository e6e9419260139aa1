//! End-to-end benchmarks for the hot paths: tape matmuls, a full model
//! forward, one training step, scene rendering, overlap scoring, and the
//! nearest-neighbor grid against a brute-force scan.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcgeo_core::dataio::{overlap_matrix, FrameView};
use vcgeo_core::diffusion::{one_step_infer, NoiseSchedule};
use vcgeo_core::eval::nearest_neighbors;
use vcgeo_core::model::{build_rgb_tokens, Model, ModelConfig};
use vcgeo_core::numerics::{Tape, Tensor};
use vcgeo_core::scenegen::{generate_sequence, SceneConfig};
use vcgeo_core::train::{train_loop, AdamW, TrainConfig};

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // [tokens, dim] x [dim, mlp] at the default model size.
    let a = random_tensor(&mut rng, vec![384, 128]);
    let b = random_tensor(&mut rng, vec![128, 512]);
    c.bench_function("matmul_384x128x512", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone());
            let vb = tape.leaf(b.clone());
            let out = tape.matmul(va, vb);
            tape.value(out).data()[0]
        })
    });
    c.bench_function("matmul_384x128x512_with_gradient", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone());
            let vb = tape.leaf(b.clone());
            let out = tape.matmul(va, vb);
            let loss = tape.mean_all(out);
            tape.gradient(loss, &[va, vb]).unwrap().len()
        })
    });
}

fn tiny_scene() -> SceneConfig {
    SceneConfig { width: 16, height: 16, frames: 2, ..SceneConfig::default() }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 4,
        dim: 32,
        patch: 4,
        mlp_ratio: 2,
        rope_split: [4, 2, 2],
        ..ModelConfig::default()
    }
}

fn bench_forward(c: &mut Criterion) {
    let cases: [(&str, SceneConfig, ModelConfig); 2] = [
        ("tiny", tiny_scene(), tiny_model()),
        ("default", SceneConfig::default(), ModelConfig::default()),
    ];
    let schedule = NoiseSchedule::linear(1000).unwrap();
    let mut group = c.benchmark_group("one_step_infer");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    for (name, scene, model_cfg) in cases {
        let sample = generate_sequence(&scene, 1).unwrap();
        let model = Model::init(model_cfg, 0).unwrap();
        let (layout, rgb) = build_rgb_tokens(&sample, &model.config).unwrap();
        group.bench_function(name, |bench| {
            bench.iter(|| {
                one_step_infer(&model, &layout, &rgb, vcgeo_core::geometry::Attribute::Coord, &schedule)
                    .unwrap()
                    .tokens
                    .data()[0]
            })
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let sample = generate_sequence(&tiny_scene(), 2).unwrap();
    let samples = vec![sample];
    let cfg = TrainConfig { steps: 1, ..TrainConfig::default() };
    let model = Model::init(tiny_model(), 0).unwrap();
    let opt = AdamW::new(&cfg, &model.params);
    c.bench_function("train_step_tiny", |bench| {
        bench.iter_batched(
            || (model.clone(), opt.clone()),
            |(mut m, mut o)| {
                train_loop(&mut m, &mut o, &samples, &cfg, 0, 1, |_| {}).unwrap();
                m
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_scenegen(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let mut seed = 0u64;
    c.bench_function("generate_sequence_64x48x4", |bench| {
        bench.iter(|| {
            seed += 1;
            generate_sequence(&cfg, seed).unwrap().id
        })
    });
}

fn bench_overlap(c: &mut Criterion) {
    let sample = generate_sequence(&SceneConfig::default(), 3).unwrap();
    let views: Vec<FrameView> =
        (0..sample.frames()).map(|f| FrameView::from_sample(&sample, f).unwrap()).collect();
    c.bench_function("overlap_matrix_4_frames", |bench| {
        bench.iter(|| overlap_matrix(&views).unwrap().len())
    });
}

/// Reference scan: argmin over all targets, first (lowest) index on ties.
fn brute_force_nn(queries: &[[f64; 3]], targets: &[[f64; 3]]) -> Vec<usize> {
    queries
        .iter()
        .map(|q| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, t) in targets.iter().enumerate() {
                let d = (0..3).map(|a| (q[a] - t[a]).powi(2)).sum::<f64>();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn bench_nearest_neighbors(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Points spread over three walls of a box, like a rendered room cloud.
    let mut cloud = |n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                let u = rng.gen_range(0.0..4.0);
                let v = rng.gen_range(0.0..3.0);
                match rng.gen_range(0..3) {
                    0 => [u, v, 0.0],
                    1 => [u, 0.0, v],
                    _ => [0.0, u, v],
                }
            })
            .collect()
    };
    let queries = cloud(3072);
    let targets = cloud(3072);
    assert_eq!(nearest_neighbors(&queries, &targets).unwrap(), brute_force_nn(&queries, &targets));
    let mut group = c.benchmark_group("nearest_neighbors_3072");
    group.bench_function("grid", |bench| {
        bench.iter(|| nearest_neighbors(&queries, &targets).unwrap().len())
    });
    group.sample_size(20);
    group.bench_function("brute_force", |bench| {
        bench.iter(|| brute_force_nn(&queries, &targets).len())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_matmul,
    bench_forward,
    bench_train_step,
    bench_scenegen,
    bench_overlap,
    bench_nearest_neighbors
);
criterion_main!(benches);

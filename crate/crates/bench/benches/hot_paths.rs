use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mucking_bench::{convex_pile, env, ma_learner};
use mucking_core::geometry::DriftGeometry;
use mucking_core::sac::ActMode;
use mucking_core::sensors::{render_depth, Camera};
use mucking_core::vehicle::ActuatorCommand;

fn env_step(c: &mut Criterion) {
    let push = ActuatorCommand::new(0.6, 0.0, 0.2, 0.1);
    c.bench_function("env/step_ma scalar obs", |b| {
        b.iter_batched(
            || env(false),
            |mut e| {
                for _ in 0..20 {
                    black_box(e.step_ma(&push).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("env/step_ma with camera", |b| {
        b.iter_batched(
            || env(true),
            |mut e| black_box(e.step_ma(&push).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn sensors(c: &mut Criterion) {
    let hf = convex_pile(1);
    let drift = DriftGeometry::default();
    let cam = Camera::tunnel(6.0);
    c.bench_function("sensors/tunnel depth image", |b| {
        b.iter(|| black_box(render_depth(&cam, &drift, &hf)))
    });
}

fn learner(c: &mut Criterion) {
    let (sac, batch) = ma_learner(64);
    let obs = batch.obs[..batch.obs.len() / batch.size].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    c.bench_function("sac/act", |b| {
        b.iter(|| black_box(sac.act(&obs, None, ActMode::Stochastic, &mut rng).unwrap()))
    });
    c.bench_function("sac/update batch 64", |b| {
        b.iter_batched(
            || sac.clone(),
            |mut s| black_box(s.update(&batch, &mut rng).unwrap()),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, env_step, sensors, learner);
criterion_main!(benches);

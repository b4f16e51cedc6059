//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mucking_core::agents::{new_agent, AgentKind, ArchConfig, MA_ACTION_DIM};
use mucking_core::env::{EnvConfig, LoadingEnv};
use mucking_core::geometry::DriftGeometry;
use mucking_core::sac::{Batch, Sac, SacConfig, Transition};
use mucking_core::sensors::STACKED_LEN;
use mucking_core::soil::{generate_pile, Heightfield, PileShape, PileSpec, SoilParams};

pub fn convex_pile(seed: u64) -> Heightfield {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_pile(&PileSpec::new(PileShape::Convex), &DriftGeometry::default(), &mut rng).expect("default pile")
}

pub fn env(camera: bool) -> LoadingEnv {
    let cfg = EnvConfig {
        ma_camera: camera,
        ..EnvConfig::default()
    };
    let mut e = LoadingEnv::new(cfg, convex_pile(0), SoilParams::default()).expect("env");
    e.reset_loading(0.0).expect("reset");
    e
}

/// Desk-sized scalar-only mucking agent and a random batch for it.
pub fn ma_learner(batch: usize) -> (Sac, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let arch = ArchConfig {
        scalar_hidden: vec![128, 128],
        camera: false,
        ..ArchConfig::ma_full()
    };
    let sac = new_agent(AgentKind::Ma, &arch, SacConfig::default(), &mut rng).expect("agent");
    let mut vec = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
    let ts: Vec<Transition> = (0..batch)
        .map(|i| Transition {
            obs: vec(STACKED_LEN),
            image: None,
            action: vec(MA_ACTION_DIM),
            reward: 0.1,
            next_obs: vec(STACKED_LEN),
            next_image: None,
            done: i % 50 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = ts.iter().collect();
    (sac, Batch::from_transitions(&refs).expect("batch"))
}

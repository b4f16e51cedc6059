use std::fs;
use std::path::Path;

use mucking_core::agents::Variant;
use mucking_core::harness::{read_metrics, MetricsRow, TrainConfig, Trainer, CHECKPOINT_DIR, METRICS_FILE};

fn quick(variant: Variant, budgets: (u64, u64, u64)) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.variant = variant;
    cfg.budgets.ma_pretrain = budgets.0;
    cfg.budgets.mpa_with_frozen_ma = budgets.1;
    cfg.budgets.joint = budgets.2;
    cfg.env.timeout = 2.4;
    cfg.checkpoint_every = 0;
    cfg.metrics_every = 20;
    cfg.ma.sac.warmup_steps = 100;
    cfg.ma.sac.batch_size = 16;
    cfg.mpa.sac.warmup_steps = 3;
    cfg.mpa.sac.batch_size = 2;
    cfg.mpa.sac.updates_per_step = 1;
    cfg
}

fn rows(dir: &Path) -> Vec<MetricsRow> {
    read_metrics(&dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let mut cfg = quick(Variant::A, (300, 200, 200));
    cfg.checkpoint_every = 250;
    let straight = tempfile::tempdir().unwrap();
    Trainer::new(cfg.clone(), straight.path()).unwrap().run(None).unwrap();

    let split = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg, split.path()).unwrap();
    t.run(Some(420)).unwrap();
    drop(t);
    let mut t = Trainer::resume(split.path()).unwrap();
    assert_eq!(t.step(), 250);
    let s = t.run(None).unwrap();
    assert!(s.finished);

    let a = fs::read(straight.path().join(METRICS_FILE)).unwrap();
    let b = fs::read(split.path().join(METRICS_FILE)).unwrap();
    assert!(a == b, "metrics differ after resume");
    for name in ["ma-A-700.ckpt", "mpa-A-700.ckpt"] {
        let x = fs::read(straight.path().join(CHECKPOINT_DIR).join(name)).unwrap();
        let y = fs::read(split.path().join(CHECKPOINT_DIR).join(name)).unwrap();
        assert!(x == y, "{name} differs after resume");
    }
}

#[test]
fn one_position_transition_per_cooperative_loading() {
    let cfg = quick(Variant::A, (100, 400, 300));
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg, dir.path()).unwrap();
    t.run(None).unwrap();
    let cooperative = rows(dir.path())
        .iter()
        .filter(|r| r.event == "loading" && r.phase != "ma_pretrain")
        .count() as u64;
    assert!(cooperative > 5);
    assert_eq!(t.mpa_transitions(), cooperative);
    assert_eq!(t.ma_transitions(), 100 + 300, "the frozen phase stored mucking transitions");
}

#[test]
fn pool_grows_once_per_sequence_after_ten_loadings() {
    let cfg = quick(Variant::B, (4_800, 0, 0));
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg, dir.path()).unwrap();
    t.run(None).unwrap();
    let rows = rows(dir.path());

    let lessons: Vec<(usize, u32)> = rows
        .iter()
        .filter(|r| r.event == "lesson")
        .map(|r| (r.loading_index.unwrap(), r.generation.unwrap()))
        .collect();
    assert_eq!(lessons, vec![(10, 0), (15, 1), (20, 2)]);

    let mut pushes = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.event == "pool_push" {
            pushes += 1;
            let prev = &rows[i - 1];
            assert_eq!(prev.event, "loading");
            assert_eq!(prev.loading_index, Some(9));
            assert_eq!(r.loading_index, Some(10));
            assert_eq!(r.generation, Some(prev.generation.unwrap() + 1));
        }
    }
    let tenth = rows
        .iter()
        .filter(|r| r.event == "loading" && r.loading_index == Some(9))
        .count();
    assert!(pushes > 0);
    assert_eq!(pushes, tenth);
    assert_eq!(t.pool().len(), 4 + pushes);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let cfg = quick(Variant::C, (600, 0, 0));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Trainer::new(cfg.clone(), a.path()).unwrap().run(None).unwrap();
    Trainer::new(cfg, b.path()).unwrap().run(None).unwrap();
    assert!(fs::read(a.path().join(METRICS_FILE)).unwrap() == fs::read(b.path().join(METRICS_FILE)).unwrap());
}

//! Subcommand implementations behind the `mucking` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mucking_core::agents::{load_policy, AgentKind, MaAgent, Variant};
use mucking_core::env::{run_loading, write_trace_csv, EnvConfig, LoadingEnv};
use mucking_core::geometry::DriftGeometry;
use mucking_core::harness::{
    evaluate_policies, run_scripted_loading, write_outcomes, EvalConfig, EvalReport, TrainConfig, Trainer,
    CHECKPOINT_DIR, STATE_FILE,
};
use mucking_core::oracle;
use mucking_core::sac::ActMode;
use mucking_core::soil::{generate_pile, PileShape, PileSnapshot, PileSpec, SoilParams};

#[derive(Debug, Parser)]
#[command(name = "mucking", version, about = "Train and evaluate a two-agent loader controller")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; defaults to the selected preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// A (position agent), B (random targets) or C (B without energy penalty).
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the training schedule.
    Train {
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Continue from the trainer state in the output directory.
        #[arg(long)]
        resume: bool,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        dump_config: bool,
        /// Stop after this many total environment steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Evaluate the newest checkpoints on the four initial piles.
    Eval {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        sequences: usize,
        #[arg(long, default_value_t = 20)]
        sequence_length: usize,
    },
    /// Record one loading as a trace CSV and tunnel depth image.
    Rollout {
        /// Use the hand-written loading cycle instead of a policy.
        #[arg(long)]
        scripted: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        target: f64,
        #[arg(long, default_value = "convex")]
        pile: String,
    },
    /// Write the four initial piles as JSON snapshots.
    GenPiles,
    /// Run the gradient, ray-cast and mass-conservation oracles.
    Selftest,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Train {
            preset,
            resume,
            dump_config,
            max_steps,
        } => train(c, preset, *resume, *dump_config, *max_steps),
        Command::Eval {
            checkpoints,
            sequences,
            sequence_length,
        } => eval(c, checkpoints.as_deref(), *sequences, *sequence_length),
        Command::Rollout {
            scripted,
            checkpoint,
            target,
            pile,
        } => rollout(c, *scripted, checkpoint.as_deref(), *target, pile),
        Command::GenPiles => gen_piles(c),
        Command::Selftest => selftest(c),
    }
}

fn load_config(c: &Common, preset: &str) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainConfig::preset(preset)?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &TrainConfig) -> PathBuf {
    c.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}-{}", cfg.run_id, cfg.variant, cfg.seed)))
}

fn train(c: &Common, preset: &str, resume: bool, dump: bool, max_steps: Option<u64>) -> Result<ExitCode> {
    if resume {
        let Some(out) = &c.out else {
            bail!("--resume needs --out pointing at an existing run");
        };
        if !out.join(STATE_FILE).exists() {
            bail!("no trainer state in {}", out.display());
        }
        let mut t = Trainer::resume(out)?;
        let s = t.run(max_steps)?;
        println!("resumed run reached step {} ({} loadings)", s.steps, s.loadings);
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(c, preset)?;
    if dump {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let out = out_dir(c, &cfg);
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut t = Trainer::new(cfg, &out)?;
    let s = t.run(max_steps)?;
    println!(
        "{} steps, {} loadings, {} MA updates, {} MPA updates -> {}",
        s.steps,
        s.loadings,
        s.ma_updates,
        s.mpa_updates,
        out.display()
    );
    for p in &s.checkpoints {
        println!("  {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Newest `{agent}-{variant}-{step}.ckpt` in `dir`.
pub fn latest_checkpoint(dir: &Path, kind: AgentKind, variant: Variant) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let prefix = format!("{}-{}-", kind.name(), variant);
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(step) = name
            .strip_prefix(&prefix)
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| step > *b) {
            best = Some((step, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn require_checkpoint(dir: &Path, kind: AgentKind, variant: Variant) -> Result<PathBuf> {
    latest_checkpoint(dir, kind, variant)?.with_context(|| {
        format!(
            "no {}-{}-<step>.ckpt checkpoint in {}; train variant {} first or pass --checkpoints",
            kind.name(),
            variant,
            dir.display(),
            variant
        )
    })
}

fn eval(c: &Common, checkpoints: Option<&Path>, sequences: usize, sequence_length: usize) -> Result<ExitCode> {
    let cfg = load_config(c, "desk")?;
    let out = out_dir(c, &cfg);
    let dir = checkpoints.map_or_else(|| out.join(CHECKPOINT_DIR), Path::to_path_buf);
    let ma_path = require_checkpoint(&dir, AgentKind::Ma, cfg.variant)?;
    let (ma, _) = load_policy(&ma_path)?;
    let mpa = if cfg.variant.uses_mpa() {
        Some(load_policy(&require_checkpoint(&dir, AgentKind::Mpa, cfg.variant)?)?.0)
    } else {
        None
    };
    let ecfg = EvalConfig {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        variant: cfg.variant,
        sequences,
        sequence_length,
        env: cfg.env.clone(),
    };
    let rows = evaluate_policies(&ecfg, &ma, mpa.as_ref())?;
    fs::create_dir_all(&out)?;
    let csv = out.join(format!("outcomes-{}.csv", cfg.variant));
    write_outcomes(&csv, &rows)?;
    let probe = LoadingEnv::new(cfg.env.clone(), mucking_core::soil::Heightfield::standard_flat(), SoilParams::evaluation())?;
    let report = EvalReport::from_rows(&rows, probe.lateral_range())?;
    println!("{}", report.table());
    println!("outcomes written to {}", csv.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_shape(name: &str) -> Result<PileShape> {
    PileShape::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .with_context(|| format!("unknown pile shape {name:?}, expected convex, concave, left_skewed or right_skewed"))
}

fn rollout(c: &Common, scripted: bool, checkpoint: Option<&Path>, target: f64, pile: &str) -> Result<ExitCode> {
    let cfg = load_config(c, "desk")?;
    let out = out_dir(c, &cfg);
    let shape = parse_shape(pile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hf = generate_pile(&PileSpec::new(shape), &DriftGeometry::default(), &mut rng)?;
    let env_cfg = EnvConfig {
        record_trace: true,
        ..cfg.effective_env()
    };
    let mut env = LoadingEnv::new(env_cfg, hf, SoilParams::evaluation())?;
    let outcome = if scripted {
        run_scripted_loading(&mut env, target)?
    } else {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => require_checkpoint(&out.join(CHECKPOINT_DIR), AgentKind::Ma, cfg.variant)?,
        };
        let (sac, _) = load_policy(&path)?;
        let mut agent = MaAgent::new(&sac, ActMode::Deterministic, cfg.seed);
        run_loading(&mut env, target, &mut agent)?
    };
    fs::create_dir_all(&out)?;
    let trace = out.join("trace.csv");
    write_trace_csv(&trace, env.trace())?;
    let image = out.join("tunnel.pgm");
    env.tunnel_depth().save_pgm(&image)?;
    println!(
        "fill {:.3}  mass {:.2} t  duration {:.2} s  energy {:.3} MJ  failed {}",
        outcome.final_fill,
        outcome.loaded_mass,
        outcome.duration,
        outcome.energy / 1e6,
        outcome.failed
    );
    println!("trace {} and depth image {}", trace.display(), image.display());
    Ok(ExitCode::SUCCESS)
}

fn gen_piles(c: &Common) -> Result<ExitCode> {
    let seed = c.seed.unwrap_or(0);
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("piles"));
    fs::create_dir_all(&out)?;
    let drift = DriftGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in PileSpec::initial_set() {
        let hf = generate_pile(&spec, &drift, &mut rng)?;
        let path = out.join(format!("pile-{}.json", spec.shape.name()));
        PileSnapshot::new(&hf, 0, Some(spec.shape)).save(&path)?;
        println!("{}  volume {:.2} m3", path.display(), hf.volume());
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest(c: &Common) -> Result<ExitCode> {
    let reports = oracle::run_all(c.seed.unwrap_or(0))?;
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

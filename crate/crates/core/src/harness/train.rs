//! Serial learner over round-robin environment workers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Lesson, TrainConfig, TrainPhase};
use super::metrics::{MetricsRow, MetricsWriter};
use crate::agents::{
    build_mpa_transition, checkpoint_name, depth_input, ma_command, new_agent, save_policy, AgentKind,
    CooperationState, MA_ACTION_DIM,
};
use crate::env::{LoadingEnv, LoadingOutcome};
use crate::error::{Error, Result};
use crate::geometry::DriftGeometry;
use crate::sac::{ActMode, Batch, LossReport, ReplayBuffer, Sac, Transition};
use crate::sensors::StackedObservation;
use crate::soil::{PilePool, SoilParams};

pub const METRICS_FILE: &str = "metrics.csv";
pub const STATE_FILE: &str = "trainer.state";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Worker {
    env: LoadingEnv,
    rng: ChaCha8Rng,
    generation: u32,
    sequence_length: usize,
    index: usize,
    obs: Option<StackedObservation>,
    coop: CooperationState,
    episode_return: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    step: u64,
    phase_index: usize,
    phase_step: u64,
    lesson: Option<usize>,
    ma: Sac,
    mpa: Option<Sac>,
    ma_buffer: ReplayBuffer,
    mpa_buffer: ReplayBuffer,
    workers: Vec<Worker>,
    pool: PilePool,
    rng: ChaCha8Rng,
    loadings: u64,
    metrics_len: u64,
}

/// What a finished (or paused) run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub loadings: u64,
    pub ma_updates: u64,
    pub mpa_updates: u64,
    pub finished: bool,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    state: TrainerState,
    out: PathBuf,
    metrics: MetricsWriter,
    checkpoints: Vec<PathBuf>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Trainer {
    /// Fresh run writing into `out`.
    pub fn new(config: TrainConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let env_cfg = config.effective_env();
        let mut rng = stream_rng(config.seed, 0);
        let pool = PilePool::from_specs(&config.piles, &DriftGeometry::default(), &mut rng)?;
        let ma = new_agent(AgentKind::Ma, &config.ma.arch, config.ma.sac.clone(), &mut rng)?;
        let mpa = if config.variant.uses_mpa() {
            Some(new_agent(AgentKind::Mpa, &config.mpa.arch, config.mpa.sac.clone(), &mut rng)?)
        } else {
            None
        };
        let mut workers = Vec::with_capacity(config.workers);
        for k in 0..config.workers {
            workers.push(Worker {
                env: LoadingEnv::new(env_cfg.clone(), pool.entries[0].heightfield.clone(), SoilParams::default())?,
                rng: stream_rng(config.seed, k as u64 + 1),
                generation: 0,
                sequence_length: 0,
                index: 0,
                obs: None,
                coop: CooperationState::default(),
                episode_return: 0.0,
            });
        }
        let metrics = MetricsWriter::create(&out.join(METRICS_FILE))?;
        let state = TrainerState {
            ma_buffer: ReplayBuffer::new(config.ma.sac.buffer_capacity),
            mpa_buffer: ReplayBuffer::new(config.mpa.sac.buffer_capacity),
            config,
            step: 0,
            phase_index: 0,
            phase_step: 0,
            lesson: None,
            ma,
            mpa,
            workers,
            pool,
            rng,
            loadings: 0,
            metrics_len: 0,
        };
        let mut t = Self {
            state,
            out: out.to_path_buf(),
            metrics,
            checkpoints: Vec::new(),
        };
        t.enter_phase()?;
        Ok(t)
    }

    /// Continues a run from the trainer state saved with its last checkpoint.
    pub fn resume(out: &Path) -> Result<Self> {
        let path = out.join(STATE_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::Checkpoint {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let state: TrainerState = bincode::deserialize(&bytes)?;
        let metrics = MetricsWriter::reopen(&out.join(METRICS_FILE), state.metrics_len)?;
        Ok(Self {
            state,
            out: out.to_path_buf(),
            metrics,
            checkpoints: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn ma(&self) -> &Sac {
        &self.state.ma
    }

    pub fn mpa(&self) -> Option<&Sac> {
        self.state.mpa.as_ref()
    }

    pub fn ma_transitions(&self) -> u64 {
        self.state.ma_buffer.total_pushed()
    }

    pub fn mpa_transitions(&self) -> u64 {
        self.state.mpa_buffer.total_pushed()
    }

    pub fn pool(&self) -> &PilePool {
        &self.state.pool
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn phase(&self) -> Option<TrainPhase> {
        self.state.config.phases().get(self.state.phase_index).copied()
    }

    fn phase_name(&self) -> &'static str {
        self.phase().map_or("done", TrainPhase::name)
    }

    fn row(&self, event: &str) -> MetricsRow {
        MetricsRow::event(self.state.step, self.phase_name(), self.state.lesson.unwrap_or(0), event)
    }

    fn current_lesson(&self, phase: TrainPhase) -> (usize, Lesson) {
        let c = &self.state.config.curriculum;
        if phase.uses_curriculum() {
            let i = c.lesson_index(self.state.phase_step, self.state.config.budgets.get(phase));
            (i, c.lessons[i])
        } else {
            (2, c.last())
        }
    }

    fn enter_phase(&mut self) -> Result<()> {
        let Some(phase) = self.phase() else {
            return Ok(());
        };
        log::info!("phase {} at step {}", phase.name(), self.state.step);
        self.state.phase_step = 0;
        self.state.lesson = None;
        for w in &mut self.state.workers {
            w.obs = None;
            w.sequence_length = 0;
        }
        let row = self.row("phase");
        self.metrics.write(&row)
    }

    /// Runs until the schedule ends or `limit` total steps are reached.
    pub fn run(&mut self, limit: Option<u64>) -> Result<TrainSummary> {
        while let Some(phase) = self.phase() {
            if limit.is_some_and(|l| self.state.step >= l) {
                break;
            }
            self.update_lesson(phase)?;
            self.env_step(phase)?;
            self.state.step += 1;
            self.state.phase_step += 1;
            let every = self.state.config.checkpoint_every;
            if every > 0 && self.state.step % every == 0 {
                self.checkpoint()?;
            }
            if self.state.phase_step >= self.state.config.budgets.get(phase) {
                self.state.phase_index += 1;
                self.enter_phase()?;
            }
        }
        let finished = self.phase().is_none();
        if finished {
            let every = self.state.config.checkpoint_every;
            if every == 0 || self.state.step % every != 0 {
                self.checkpoint()?;
            }
        }
        self.metrics.flush()?;
        Ok(TrainSummary {
            steps: self.state.step,
            loadings: self.state.loadings,
            ma_updates: self.state.ma.updates(),
            mpa_updates: self.state.mpa.as_ref().map_or(0, Sac::updates),
            finished,
            checkpoints: self.checkpoints.clone(),
        })
    }

    fn update_lesson(&mut self, phase: TrainPhase) -> Result<()> {
        let (i, lesson) = self.current_lesson(phase);
        if self.state.lesson != Some(i) {
            self.state.lesson = Some(i);
            log::info!(
                "lesson {i}: {} loadings, generation <= {}",
                lesson.sequence_length,
                lesson.max_generation
            );
            let mut row = self.row("lesson");
            row.loading_index = Some(lesson.sequence_length);
            row.generation = Some(lesson.max_generation);
            self.metrics.write(&row)?;
        }
        Ok(())
    }

    fn start_sequence(&mut self, k: usize, lesson: Lesson) -> Result<()> {
        let s = &mut self.state;
        let w = &mut s.workers[k];
        let entry = s.pool.draw(&mut w.rng, lesson.max_generation)?;
        let soil = w.env.draw_soil(&mut w.rng);
        w.env.set_pile(entry.heightfield.clone(), soil);
        w.generation = entry.generation;
        w.sequence_length = lesson.sequence_length;
        w.index = 0;
        Ok(())
    }

    fn start_loading(&mut self, k: usize, phase: TrainPhase) -> Result<()> {
        let s = &mut self.state;
        let w = &mut s.workers[k];
        let range = w.env.lateral_range();
        let target = match (&s.mpa, phase.uses_mpa()) {
            (Some(mpa), true) => {
                let depth = w.env.tunnel_depth();
                let action = if s.mpa_buffer.total_pushed() < mpa.config.warmup_steps {
                    w.rng.random_range(-1.0f32..=1.0)
                } else {
                    mpa.act(&[], Some(&depth_input(&depth)), ActMode::Stochastic, &mut w.rng)?[0]
                };
                w.coop.decide(&depth, action, range)
            }
            _ => w.rng.random_range(-range..=range),
        };
        w.obs = Some(w.env.reset_loading(target)?);
        w.episode_return = 0.0;
        Ok(())
    }

    fn env_step(&mut self, phase: TrainPhase) -> Result<()> {
        let k = (self.state.step % self.state.workers.len() as u64) as usize;
        if self.state.workers[k].obs.is_none() {
            if self.state.workers[k].sequence_length == 0 {
                let (_, lesson) = self.current_lesson(phase);
                self.start_sequence(k, lesson)?;
            }
            self.start_loading(k, phase)?;
        }
        let train_ma = phase.trains_ma();
        let s = &mut self.state;
        let w = &mut s.workers[k];
        let obs = w.obs.take().expect("loading started");
        let image = obs.depth.as_ref().map(depth_input);
        let action: Vec<f32> = if train_ma && s.ma_buffer.total_pushed() < s.ma.config.warmup_steps {
            (0..MA_ACTION_DIM).map(|_| w.rng.random_range(-1.0f32..=1.0)).collect()
        } else {
            let mode = if train_ma {
                ActMode::Stochastic
            } else {
                ActMode::Deterministic
            };
            s.ma.act(&obs.scalars, image.as_deref(), mode, &mut w.rng)?
        };
        let out = w.env.step_ma(&ma_command(&action)?)?;
        w.episode_return += out.reward;
        if train_ma {
            s.ma_buffer.push(Transition {
                obs: obs.scalars,
                image,
                action,
                reward: out.reward as f32,
                next_obs: out.observation.scalars.clone(),
                next_image: out.observation.depth.as_ref().map(depth_input),
                done: out.outcome.as_ref().is_some_and(|o| !o.failed),
            });
        }
        w.obs = Some(out.observation);
        if let Some(outcome) = out.outcome {
            w.obs = None;
            self.finish_loading(k, phase, outcome)?;
        }
        if train_ma {
            self.train_ma()?;
        }
        Ok(())
    }

    fn finish_loading(&mut self, k: usize, phase: TrainPhase, outcome: LoadingOutcome) -> Result<()> {
        self.state.loadings += 1;
        let mut row = self.row("loading");
        {
            let w = &self.state.workers[k];
            row.episode_return = Some(w.episode_return);
            row.fill = Some(outcome.final_fill);
            row.mass_t = Some(outcome.loaded_mass);
            row.duration_s = Some(outcome.duration);
            row.energy_j = Some(outcome.energy);
            row.failed = Some(outcome.failed);
            row.target_x = Some(outcome.target_x);
            row.generation = Some(w.generation);
            row.loading_index = Some(w.index);
        }
        self.metrics.write(&row)?;

        let s = &mut self.state;
        let w = &mut s.workers[k];
        let sequence_done = w.index + 1 == w.sequence_length;
        if phase.uses_mpa() && s.mpa.is_some() {
            let next = w.env.tunnel_depth();
            let t = build_mpa_transition(&mut w.coop, &w.env, &outcome, &next, sequence_done)?;
            s.mpa_buffer.push(t);
        }
        w.index += 1;
        let mut pushed = None;
        if w.index == w.env.config.loadings_per_pile_save {
            pushed = Some(s.pool.push(w.env.heightfield.clone(), w.generation));
        }
        if sequence_done {
            w.sequence_length = 0;
        }
        if let Some(g) = pushed {
            let mut row = self.row("pool_push");
            row.generation = Some(g);
            row.loading_index = Some(self.state.workers[k].index);
            self.metrics.write(&row)?;
        }
        if phase.uses_mpa() {
            self.train_mpa()?;
        }
        Ok(())
    }

    fn train_ma(&mut self) -> Result<()> {
        let s = &mut self.state;
        let cfg = &s.ma.config;
        if s.ma_buffer.total_pushed() < cfg.warmup_steps || s.ma_buffer.len() < cfg.batch_size {
            return Ok(());
        }
        let (n, bs) = (cfg.updates_per_step, cfg.batch_size);
        let mut logged = Vec::new();
        for _ in 0..n {
            let batch = Batch::from_transitions(&s.ma_buffer.sample(&mut s.rng, bs)?)?;
            let report = s.ma.update(&batch, &mut s.rng)?;
            if report.update % s.config.metrics_every == 0 {
                logged.push(report);
            }
        }
        for report in logged {
            let row = self.row("update").with_losses("ma", &report);
            self.metrics.write(&row)?;
        }
        Ok(())
    }

    fn train_mpa(&mut self) -> Result<()> {
        let s = &mut self.state;
        let Some(mpa) = s.mpa.as_mut() else {
            return Ok(());
        };
        let cfg = &mpa.config;
        if s.mpa_buffer.total_pushed() < cfg.warmup_steps || s.mpa_buffer.len() < cfg.batch_size {
            return Ok(());
        }
        let (n, bs) = (cfg.updates_per_step, cfg.batch_size);
        let mut last = LossReport::default();
        for _ in 0..n {
            let batch = Batch::from_transitions(&s.mpa_buffer.sample(&mut s.rng, bs)?)?;
            last = mpa.update(&batch, &mut s.rng)?;
        }
        let row = self.row("update").with_losses("mpa", &last);
        self.metrics.write(&row)
    }

    /// Writes policies, then the trainer state that resumes from here.
    pub fn checkpoint(&mut self) -> Result<()> {
        let dir = self.out.join(CHECKPOINT_DIR);
        let (variant, step) = (self.state.config.variant, self.state.step);
        let ma_path = dir.join(checkpoint_name(AgentKind::Ma, variant, step));
        save_policy(&ma_path, &self.state.ma, AgentKind::Ma, variant, step)?;
        self.checkpoints.push(ma_path);
        if let Some(mpa) = &self.state.mpa {
            let p = dir.join(checkpoint_name(AgentKind::Mpa, variant, step));
            save_policy(&p, mpa, AgentKind::Mpa, variant, step)?;
            self.checkpoints.push(p);
        }
        let row = self.row("checkpoint");
        self.metrics.write(&row)?;
        self.state.metrics_len = self.metrics.flush()?;
        if self.state.config.save_trainer_state {
            let tmp = self.out.join(format!("{STATE_FILE}.tmp"));
            fs::write(&tmp, bincode::serialize(&self.state)?)?;
            fs::rename(&tmp, self.out.join(STATE_FILE))?;
        }
        Ok(())
    }
}

/// Trains `config` from scratch into `out`.
pub fn train(config: TrainConfig, out: &Path) -> Result<TrainSummary> {
    Trainer::new(config, out)?.run(None)
}

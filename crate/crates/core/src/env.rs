//! The loading cycle: approach, fill and breakout, with the mucking-agent
//! reward, the terminal bonus and the mucking-position reward, plus
//! multi-loading sequences on a persistent pile.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DriftGeometry;
use crate::sensors::{
    assemble_ma_obs, lidar_scan, render_depth, scalar_obs, Camera, DepthImage, ObservationHistory,
    StackedObservation,
};
use crate::soil::{
    dig_resistance, excavate, pile_edge_metrics, planarity, Heightfield, PilePool, SoilParams,
};
use crate::vehicle::{fill_bucket, ActuatorCommand, VehicleModel, VehicleParams, VehicleState, WorkBreakdown};

/// Lateral distance beyond which the position reward is zero (m).
pub const POSITION_DECAY: f64 = 4.0;
pub const POSITION_EXPONENT: f64 = 0.4;
pub const BONUS_SCALE: f64 = 10.0;

/// `r_p = 1 − min(|Δx| / 4, 1)^0.4`
pub fn position_reward(dx: f64) -> f64 {
    1.0 - (dx.abs() / POSITION_DECAY).min(1.0).powf(POSITION_EXPONENT)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    /// Per joule.
    pub w2: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w1: 100.0, w2: 1e-6 }
    }
}

/// Per-action mucking-agent reward `w1·C·W·r_p·r_l − w2·p_w`.
pub fn ma_reward(
    weights: &RewardWeights,
    wall_contact: bool,
    wheel_slip: bool,
    dx: f64,
    fill_increment: f64,
    work: &WorkBreakdown,
) -> f64 {
    let c = if wall_contact { 0.0 } else { 1.0 };
    let w = if wheel_slip { 0.0 } else { 1.0 };
    weights.w1 * c * w * position_reward(dx) * fill_increment - weights.w2 * work.weighted()
}

/// Bonus on successful breakout, `10·r_p(T)·l_T`.
pub fn terminal_bonus(dx: f64, final_fill: f64) -> f64 {
    BONUS_SCALE * position_reward(dx) * final_fill
}

/// Mucking-position reward `l·exp(−d²/d0²)`.
pub fn mpa_reward(final_fill: f64, edge_spread: f64, d0: f64) -> f64 {
    final_fill * planarity(edge_spread, d0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoilMode {
    /// Perturbed density and scaling drawn at every pile reset.
    Randomized,
    /// Density pinned at the upper limit, scaling still drawn.
    Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub physics_dt: f64,
    /// Physics steps per agent action.
    pub control_interval: usize,
    pub timeout: f64,
    pub loadings_per_pile_save: usize,
    pub sequence_length: usize,
    pub weights: RewardWeights,
    pub d0: f64,
    /// Time the bucket must stay fully tilted and still to break out (s).
    pub breakout_hold: f64,
    /// Largest normalized tilt rate that counts as holding still.
    pub hold_rate_tolerance: f64,
    /// Initial longitudinal position of the front axle (m).
    pub start_y: f64,
    /// Feed the vehicle-mounted depth image to the mucking agent.
    pub ma_camera: bool,
    pub soil_mode: SoilMode,
    pub record_trace: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.02,
            control_interval: 3,
            timeout: 48.0,
            loadings_per_pile_save: 10,
            sequence_length: 20,
            weights: RewardWeights::default(),
            d0: std::f64::consts::SQRT_2,
            breakout_hold: 1.0,
            hold_rate_tolerance: 0.05,
            start_y: 0.0,
            ma_camera: false,
            soil_mode: SoilMode::Randomized,
            record_trace: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.physics_dt > 0.0) || self.control_interval == 0 {
            return bad("physics_dt and control_interval must be positive");
        }
        if !(self.timeout > 0.0) {
            return bad("timeout must be positive");
        }
        if !(self.weights.w1 >= 0.0 && self.weights.w2 >= 0.0) {
            return bad("reward weights must be non-negative");
        }
        if !(self.d0 > 0.0) || self.sequence_length == 0 {
            return bad("d0 and sequence_length must be positive");
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.control_interval as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Fill,
    BreakoutPending,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Success,
    Timeout,
    Ongoing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingOutcome {
    pub loaded_mass: f64,
    pub duration: f64,
    /// Unweighted actuator and engine work (J).
    pub energy: f64,
    /// Bucket tip minus target, lateral (m).
    pub position_error: f64,
    pub failed: bool,
    pub final_fill: f64,
    pub planarity: f64,
    pub edge_spread: f64,
    pub target_x: f64,
    pub final_x: f64,
    pub bonus: f64,
}

impl LoadingOutcome {
    pub fn productivity(&self) -> f64 {
        if self.duration > 0.0 {
            self.loaded_mass / self.duration
        } else {
            0.0
        }
    }
}

/// One control step of an episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub clock: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub lift: f64,
    pub tilt: f64,
    pub speed: f64,
    pub fill: f64,
    pub cut_depth: f64,
    pub resistance: f64,
    pub reward: f64,
    pub dx: f64,
    pub p_tilt: f64,
    pub p_lift: f64,
    pub p_steer: f64,
    pub p_engine: f64,
    pub wall_contact: bool,
    pub wheel_slip: bool,
    pub phase: Phase,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub observation: StackedObservation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<LoadingOutcome>,
}

/// A loader in a drift in front of one pile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadingEnv {
    pub config: EnvConfig,
    pub model: VehicleModel,
    pub soil: SoilParams,
    pub heightfield: Heightfield,
    state: VehicleState,
    history: ObservationHistory,
    target_x: f64,
    clock: f64,
    steps: u64,
    work: WorkBreakdown,
    hold: f64,
    phase: Phase,
    last_cut_depth: f64,
    initial_toe_y: f64,
    clamped_targets: u64,
    trace: Vec<TraceRow>,
}

impl LoadingEnv {
    pub fn new(config: EnvConfig, heightfield: Heightfield, soil: SoilParams) -> Result<Self> {
        config.validate()?;
        let model = VehicleModel::new(VehicleParams::default(), DriftGeometry::default());
        let mut env = Self {
            config,
            model,
            soil,
            heightfield,
            state: VehicleState::default(),
            history: ObservationHistory::new(),
            target_x: 0.0,
            clock: 0.0,
            steps: 0,
            work: WorkBreakdown::default(),
            hold: 0.0,
            phase: Phase::Done,
            last_cut_depth: 0.0,
            initial_toe_y: 0.0,
            clamped_targets: 0,
            trace: Vec::new(),
        };
        env.set_pile(env.heightfield.clone(), soil);
        Ok(env)
    }

    /// Replaces the pile, e.g. at the start of a new sequence.
    pub fn set_pile(&mut self, heightfield: Heightfield, soil: SoilParams) {
        let half = 0.5 * self.model.params.bucket_width;
        self.initial_toe_y = heightfield
            .toe_y(-half, half, crate::soil::EDGE_EPSILON)
            .unwrap_or(heightfield.length());
        self.heightfield = heightfield;
        self.soil = soil;
        self.phase = Phase::Done;
    }

    /// Draws soil parameters according to the configured mode.
    pub fn draw_soil<R: Rng + ?Sized>(&self, rng: &mut R) -> SoilParams {
        let mut soil = crate::soil::sample_soil(rng);
        if self.config.soil_mode == SoilMode::Evaluation {
            soil.density = crate::soil::MAX_DENSITY;
        }
        soil
    }

    /// Largest admissible |target_x|: half the drift minus half the bucket.
    pub fn lateral_range(&self) -> f64 {
        self.model.drift.half_width() - 0.5 * self.model.params.bucket_width
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn target_x(&self) -> f64 {
        self.target_x
    }

    pub fn work(&self) -> &WorkBreakdown {
        &self.work
    }

    pub fn clamped_targets(&self) -> u64 {
        self.clamped_targets
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        std::mem::take(&mut self.trace)
    }

    /// Depth image from the fixed tunnel camera used for position selection.
    pub fn tunnel_depth(&self) -> DepthImage {
        render_depth(&Camera::tunnel(self.initial_toe_y), &self.model.drift, &self.heightfield)
    }

    pub fn reset_loading(&mut self, target_x: f64) -> Result<StackedObservation> {
        crate::error::ensure_finite("target_x", target_x)?;
        let range = self.lateral_range();
        let clamped = target_x.clamp(-range, range);
        if clamped != target_x {
            self.clamped_targets += 1;
            log::warn!("target {target_x:.3} m outside ±{range:.3} m, clamped");
        }
        self.target_x = clamped;
        self.state = VehicleState::parked(0.0, self.config.start_y);
        self.history.clear();
        self.clock = 0.0;
        self.steps = 0;
        self.work = WorkBreakdown::default();
        self.hold = 0.0;
        self.phase = Phase::Approach;
        self.last_cut_depth = 0.0;
        self.trace.clear();
        Ok(self.observe())
    }

    fn observe(&mut self) -> StackedObservation {
        let lidar = lidar_scan(&self.state, &self.model.drift, &self.heightfield);
        let current = scalar_obs(&self.model, &self.state, self.target_x, &lidar);
        let depth = self
            .config
            .ma_camera
            .then(|| render_depth(&Camera::vehicle_mounted(&self.state), &self.model.drift, &self.heightfield));
        assemble_ma_obs(&mut self.history, current, depth)
    }

    pub fn lateral_error(&self) -> f64 {
        self.state.bucket_tip(&self.model.params).0 - self.target_x
    }

    /// Classifies the current state for termination.
    pub fn detect_terminal(&self) -> Terminal {
        if self.hold >= self.config.breakout_hold - 1e-9 {
            Terminal::Success
        } else if self.clock >= self.config.timeout - 1e-9 {
            Terminal::Timeout
        } else {
            Terminal::Ongoing
        }
    }

    fn holding_breakout(&self, cut_depth: f64) -> bool {
        let p = &self.model.params;
        let rate = self.state.tilt_rate / p.tilt.rate_limit();
        self.state.tilt >= 1.0 - 1e-9 && rate.abs() < self.config.hold_rate_tolerance && cut_depth <= 0.0
    }

    pub fn step_ma(&mut self, action: &ActuatorCommand) -> Result<StepOutput> {
        if self.phase == Phase::Done {
            return Err(Error::EpisodeDone);
        }
        action.check_finite()?;
        let cmd = action.clamped();
        let dt = self.config.physics_dt;
        let fill_before = self.state.fill_fraction;
        let mut work = WorkBreakdown::default();
        let mut contact = false;
        let mut slip = false;
        let mut resistance = 0.0;
        let mut cut_depth = self.last_cut_depth;
        for _ in 0..self.config.control_interval {
            let cut = self.model.bucket_engagement(&self.state, &self.heightfield);
            resistance = dig_resistance(&self.soil, &cut)?;
            let r = self
                .model
                .step(&self.state, &cmd, resistance, self.soil.density, &self.heightfield, dt)?;
            let mut next = r.state;
            if let Some(region) = self.model.swept_region(&self.state, &next) {
                let removed = excavate(&mut self.heightfield, &region);
                next = fill_bucket(&next, &self.model.params, removed).0;
            }
            work.accumulate(&r.work);
            contact |= r.flags.wall_contact;
            slip |= r.flags.wheel_slip;
            self.state = next;
            self.clock += dt;
            cut_depth = self.model.bucket_engagement(&self.state, &self.heightfield).depth;
            if cut_depth > 0.0 && self.phase == Phase::Approach {
                self.phase = Phase::Fill;
            }
            if self.state.tilt >= 1.0 - 1e-9 && self.phase < Phase::BreakoutPending {
                self.phase = Phase::BreakoutPending;
            }
            if self.holding_breakout(cut_depth) {
                self.hold += dt;
            } else {
                self.hold = 0.0;
            }
            if self.hold >= self.config.breakout_hold - 1e-9 {
                break;
            }
        }
        self.last_cut_depth = cut_depth;
        self.steps += 1;
        self.work.accumulate(&work);

        let dx = self.lateral_error();
        let mut reward = ma_reward(
            &self.config.weights,
            contact,
            slip,
            dx,
            self.state.fill_fraction - fill_before,
            &work,
        );
        let terminal = self.detect_terminal();
        let outcome = match terminal {
            Terminal::Ongoing => None,
            Terminal::Success | Terminal::Timeout => {
                let success = terminal == Terminal::Success;
                let bonus = if success {
                    terminal_bonus(dx, self.state.fill_fraction)
                } else {
                    0.0
                };
                reward += bonus;
                self.phase = Phase::Done;
                Some(self.outcome(!success, bonus))
            }
        };
        if self.config.record_trace {
            self.trace.push(TraceRow {
                step: self.steps,
                clock: self.clock,
                x: self.state.x,
                y: self.state.y,
                heading: self.state.heading,
                lift: self.state.lift,
                tilt: self.state.tilt,
                speed: self.state.forward_speed,
                fill: self.state.fill_fraction,
                cut_depth,
                resistance,
                reward,
                dx,
                p_tilt: work.p_tilt,
                p_lift: work.p_lift,
                p_steer: work.p_steer,
                p_engine: work.p_engine,
                wall_contact: contact,
                wheel_slip: slip,
                phase: self.phase,
            });
        }
        Ok(StepOutput {
            observation: self.observe(),
            reward,
            done: outcome.is_some(),
            outcome,
        })
    }

    fn outcome(&self, failed: bool, bonus: f64) -> LoadingOutcome {
        let spread = pile_edge_metrics(&self.heightfield);
        let tip = self.state.bucket_tip(&self.model.params);
        LoadingOutcome {
            loaded_mass: measure_bucket_mass(&self.state, &self.soil),
            duration: self.clock,
            energy: self.work.total(),
            position_error: tip.0 - self.target_x,
            failed,
            final_fill: self.state.fill_fraction,
            planarity: planarity(spread, self.config.d0),
            edge_spread: spread,
            target_x: self.target_x,
            final_x: tip.0,
            bonus,
        }
    }
}

/// Retained bucket load in tonnes.
pub fn measure_bucket_mass(state: &VehicleState, soil: &SoilParams) -> f64 {
    state.fill_volume * soil.density / 1000.0
}

/// Chooses the lateral mucking position once per loading.
pub trait TargetSelector {
    fn select(&mut self, env: &LoadingEnv) -> Result<f64>;
}

/// Drives the vehicle during one loading.
pub trait MaController {
    fn act(&mut self, observation: &StackedObservation) -> Result<ActuatorCommand>;
}

/// Uniformly random targets over the usable lateral range.
#[derive(Clone, Debug)]
pub struct RandomTargets {
    pub rng: ChaCha8Rng,
}

impl TargetSelector for RandomTargets {
    fn select(&mut self, env: &LoadingEnv) -> Result<f64> {
        let r = env.lateral_range();
        Ok(self.rng.random_range(-r..=r))
    }
}

/// Always the same command.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantController(pub ActuatorCommand);

impl MaController for ConstantController {
    fn act(&mut self, _: &StackedObservation) -> Result<ActuatorCommand> {
        Ok(self.0)
    }
}

/// Result of one loading within a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLoading {
    pub index: usize,
    pub outcome: LoadingOutcome,
    pub mpa_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub loadings: Vec<SequenceLoading>,
    /// Generation tags of snapshots pushed to the pool.
    pub pushed: Vec<u32>,
}

/// Runs one loading to completion.
pub fn run_loading(env: &mut LoadingEnv, target_x: f64, ma: &mut dyn MaController) -> Result<LoadingOutcome> {
    let mut obs = env.reset_loading(target_x)?;
    loop {
        let cmd = ma.act(&obs)?;
        let out = env.step_ma(&cmd)?;
        if let Some(o) = out.outcome {
            return Ok(o);
        }
        obs = out.observation;
    }
}

/// `n_loadings` consecutive loadings on the current pile. After the
/// configured number of loadings the pile is pushed to `pool` as a child
/// of `generation`.
pub fn run_sequence(
    env: &mut LoadingEnv,
    selector: &mut dyn TargetSelector,
    ma: &mut dyn MaController,
    n_loadings: usize,
    mut pool: Option<&mut PilePool>,
    generation: u32,
) -> Result<SequenceReport> {
    if n_loadings == 0 {
        return Err(Error::InvalidArgument("sequence needs at least one loading".into()));
    }
    let mut report = SequenceReport {
        loadings: Vec::with_capacity(n_loadings),
        pushed: Vec::new(),
    };
    for index in 0..n_loadings {
        let target = selector.select(env)?;
        let outcome = run_loading(env, target, ma)?;
        let r = mpa_reward(outcome.final_fill, outcome.edge_spread, env.config.d0);
        report.loadings.push(SequenceLoading {
            index,
            outcome,
            mpa_reward: r,
        });
        if index + 1 == env.config.loadings_per_pile_save {
            if let Some(pool) = pool.as_deref_mut() {
                report.pushed.push(pool.push(env.heightfield.clone(), generation));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soil::{generate_pile, PileShape, PileSpec};
    use rand::SeedableRng;

    fn env() -> LoadingEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hf = generate_pile(&PileSpec::new(PileShape::Convex), &DriftGeometry::default(), &mut rng).unwrap();
        LoadingEnv::new(EnvConfig::default(), hf, SoilParams::default()).unwrap()
    }

    #[test]
    fn position_reward_shape() {
        assert_eq!(position_reward(0.0), 1.0);
        assert_eq!(position_reward(4.0), 0.0);
        assert_eq!(position_reward(7.0), 0.0);
        assert_eq!(position_reward(-0.25), position_reward(0.25));
        assert!((position_reward(0.25) - 0.6701).abs() < 1e-4);
    }

    #[test]
    fn contact_zeroes_positive_term() {
        let work = WorkBreakdown {
            p_engine: 500.0,
            ..Default::default()
        };
        let r = ma_reward(&RewardWeights::default(), true, false, 0.0, 0.1, &work);
        assert!((r + 1e-6 * 100.0).abs() < 1e-15);
    }

    #[test]
    fn reset_clears_episode() {
        let mut e = env();
        e.reset_loading(0.0).unwrap();
        e.step_ma(&ActuatorCommand::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        e.reset_loading(0.0).unwrap();
        assert_eq!(e.state().fill_fraction, 0.0);
        assert_eq!(e.work().total(), 0.0);
        assert_eq!(e.clock(), 0.0);
    }

    #[test]
    fn target_clamped_to_range() {
        let mut e = env();
        e.reset_loading(10.0).unwrap();
        assert!((e.target_x() - 2.75).abs() < 1e-12);
        assert_eq!(e.clamped_targets(), 1);
    }

    #[test]
    fn idle_loading_times_out() {
        let mut e = env();
        let o = run_loading(&mut e, 0.0, &mut ConstantController::default()).unwrap();
        assert!(o.failed);
        assert_eq!(o.loaded_mass, 0.0);
        assert_eq!(o.bonus, 0.0);
        assert!(o.duration >= 48.0 - 1e-9 && o.duration <= 48.0 + e.config.control_dt());
        assert!(matches!(e.step_ma(&ActuatorCommand::default()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn full_tilt_clear_of_pile_succeeds() {
        let mut e = env();
        e.reset_loading(0.0).unwrap();
        let mut done = None;
        for _ in 0..200 {
            let out = e.step_ma(&ActuatorCommand::new(0.0, 0.0, 0.0, 1.0)).unwrap();
            if out.done {
                done = out.outcome;
                break;
            }
        }
        let o = done.expect("breakout");
        assert!(!o.failed);
        // Tilting takes 2.5 s, then a one second hold.
        assert!(o.duration > 3.4 && o.duration < 3.7, "{}", o.duration);
    }
}

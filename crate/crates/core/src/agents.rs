//! Mucking agent (vehicle control) and mucking-position agent (lateral
//! dig position), their network layouts and how they cooperate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{mpa_reward, LoadingEnv, LoadingOutcome, MaController, Phase, TargetSelector};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Activation, ConvSpec, NetSpec, Tensor, VisualSpec};
use crate::sac::{ActMode, Sac, SacConfig, Transition};
use crate::sensors::{DepthImage, StackedObservation, IMAGE_HEIGHT, IMAGE_WIDTH, MAX_RANGE, STACKED_LEN};
use crate::vehicle::ActuatorCommand;

pub const MA_ACTION_DIM: usize = 4;
pub const MPA_ACTION_DIM: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Learned positions and the full reward.
    A,
    /// Random positions.
    B,
    /// Random positions, no energy penalty.
    C,
}

impl Variant {
    pub fn uses_mpa(self) -> bool {
        self == Variant::A
    }

    pub fn energy_penalty(self) -> bool {
        self != Variant::C
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}, expected A, B or C"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ma,
    Mpa,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ma => "ma",
            AgentKind::Mpa => "mpa",
        }
    }
}

/// Layer widths for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub scalar_hidden: Vec<usize>,
    /// Dense tail after the convolutions; ignored without a camera.
    pub visual_hidden: Vec<usize>,
    pub conv: Vec<ConvSpec>,
    pub camera: bool,
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::ma_full()
    }
}

fn standard_conv() -> Vec<ConvSpec> {
    vec![
        ConvSpec {
            channels: 16,
            kernel: 8,
            stride: 4,
        },
        ConvSpec {
            channels: 32,
            kernel: 4,
            stride: 2,
        },
    ]
}

impl ArchConfig {
    pub fn ma_full() -> Self {
        Self {
            scalar_hidden: vec![256; 4],
            visual_hidden: vec![256; 4],
            conv: standard_conv(),
            camera: true,
            activation: Activation::Relu,
        }
    }

    pub fn mpa_full() -> Self {
        Self {
            scalar_hidden: Vec::new(),
            visual_hidden: vec![128; 3],
            conv: standard_conv(),
            camera: true,
            activation: Activation::Relu,
        }
    }

    fn visual(&self) -> Option<VisualSpec> {
        self.camera.then(|| VisualSpec {
            height: IMAGE_HEIGHT,
            width: IMAGE_WIDTH,
            channels: 1,
            conv: self.conv.clone(),
            hidden: self.visual_hidden.clone(),
        })
    }

    /// Actor layout for the mucking agent: stacked scalars plus an
    /// optional vehicle camera.
    pub fn ma_spec(&self) -> NetSpec {
        NetSpec {
            scalar_inputs: STACKED_LEN,
            scalar_hidden: self.scalar_hidden.clone(),
            visual: self.visual(),
            outputs: 2 * MA_ACTION_DIM,
            activation: self.activation,
        }
    }

    /// Actor layout for the position agent: tunnel camera only.
    pub fn mpa_spec(&self) -> Result<NetSpec> {
        if !self.camera {
            return Err(Error::Config("the position agent needs its camera".into()));
        }
        Ok(NetSpec {
            scalar_inputs: 0,
            scalar_hidden: Vec::new(),
            visual: self.visual(),
            outputs: 2 * MPA_ACTION_DIM,
            activation: self.activation,
        })
    }
}

/// Maps a position action in `[-1, 1]` to a lateral target.
pub fn target_from_action(action: f64, range: f64) -> f64 {
    action.clamp(-1.0, 1.0) * range
}

pub fn action_from_target(target_x: f64, range: f64) -> f64 {
    (target_x / range).clamp(-1.0, 1.0)
}

pub fn ma_command(action: &[f32]) -> Result<ActuatorCommand> {
    if action.len() != MA_ACTION_DIM {
        return Err(Error::ShapeMismatch {
            context: "mucking action",
            expected: vec![MA_ACTION_DIM],
            actual: vec![action.len()],
        });
    }
    Ok(ActuatorCommand::from_slice(action))
}

pub fn depth_input(depth: &DepthImage) -> Vec<f32> {
    depth.normalized(MAX_RANGE)
}

/// Network inputs for one mucking-agent observation.
pub fn ma_inputs(obs: &StackedObservation) -> (Vec<f32>, Option<Vec<f32>>) {
    (obs.scalars.clone(), obs.depth.as_ref().map(depth_input))
}

/// Mucking agent acting through a SAC policy.
#[derive(Clone, Debug)]
pub struct MaAgent<'a> {
    pub sac: &'a Sac,
    pub mode: ActMode,
    pub rng: ChaCha8Rng,
    /// Last action taken, in policy space.
    pub last_action: Vec<f32>,
}

impl<'a> MaAgent<'a> {
    pub fn new(sac: &'a Sac, mode: ActMode, seed: u64) -> Self {
        Self {
            sac,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_action: Vec::new(),
        }
    }
}

impl MaController for MaAgent<'_> {
    fn act(&mut self, obs: &StackedObservation) -> Result<ActuatorCommand> {
        let (s, img) = ma_inputs(obs);
        self.last_action = self.sac.act(&s, img.as_deref(), self.mode, &mut self.rng)?;
        ma_command(&self.last_action)
    }
}

/// Position agent acting through a SAC policy on the tunnel camera.
#[derive(Clone, Debug)]
pub struct MpaAgent<'a> {
    pub sac: &'a Sac,
    pub mode: ActMode,
    pub rng: ChaCha8Rng,
}

impl<'a> MpaAgent<'a> {
    pub fn new(sac: &'a Sac, mode: ActMode, seed: u64) -> Self {
        Self {
            sac,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn select_action(&mut self, depth: &DepthImage) -> Result<f32> {
        let img = depth_input(depth);
        Ok(self.sac.act(&[], Some(&img), self.mode, &mut self.rng)?[0])
    }
}

impl TargetSelector for MpaAgent<'_> {
    fn select(&mut self, env: &LoadingEnv) -> Result<f64> {
        let a = self.select_action(&env.tunnel_depth())?;
        Ok(target_from_action(a as f64, env.lateral_range()))
    }
}

/// Position decision awaiting the end of its loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingDecision {
    pub image: Vec<f32>,
    pub action: f32,
}

/// Bookkeeping that pairs every loading with exactly one position decision.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CooperationState {
    pub target_x: f64,
    pub pending: Option<PendingDecision>,
}

impl CooperationState {
    pub fn decide(&mut self, depth: &DepthImage, action: f32, range: f64) -> f64 {
        self.target_x = target_from_action(action as f64, range);
        self.pending = Some(PendingDecision {
            image: depth_input(depth),
            action,
        });
        self.target_x
    }
}

/// Closes the pending decision with the loading's outcome. `next_depth` is
/// the tunnel view after the loading; `sequence_done` marks the last
/// loading of a pile.
pub fn build_mpa_transition(
    coop: &mut CooperationState,
    env: &LoadingEnv,
    outcome: &LoadingOutcome,
    next_depth: &DepthImage,
    sequence_done: bool,
) -> Result<Transition> {
    if env.phase() != Phase::Done {
        return Err(Error::LoadingInProgress);
    }
    let pending = coop
        .pending
        .take()
        .ok_or_else(|| Error::InvalidArgument("no position decision pending".into()))?;
    let reward = mpa_reward(outcome.final_fill, outcome.edge_spread, env.config.d0);
    Ok(Transition {
        obs: Vec::new(),
        image: Some(pending.image),
        action: vec![pending.action],
        reward: reward as f32,
        next_obs: Vec::new(),
        next_image: Some(depth_input(next_depth)),
        done: sequence_done,
    })
}

pub fn new_agent<R: rand::Rng + ?Sized>(
    kind: AgentKind,
    arch: &ArchConfig,
    sac: SacConfig,
    rng: &mut R,
) -> Result<Sac> {
    match kind {
        AgentKind::Ma => Sac::new(sac, arch.ma_spec(), MA_ACTION_DIM, rng),
        AgentKind::Mpa => Sac::new(sac, arch.mpa_spec()?, MPA_ACTION_DIM, rng),
    }
}

pub fn checkpoint_name(kind: AgentKind, variant: Variant, step: u64) -> String {
    format!("{}-{}-{}.ckpt", kind.name(), variant, step)
}

/// Writes the actor and both critics with their architecture.
pub fn save_policy(path: &Path, sac: &Sac, kind: AgentKind, variant: Variant, step: u64) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (prefix, net) in [("actor", &sac.actor), ("q1", &sac.q1), ("q2", &sac.q2)] {
        for (name, t) in net.named_params() {
            tensors.push((format!("{prefix}.{name}"), t));
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("agent".into(), kind.name().into());
    meta.insert("variant".into(), variant.to_string());
    meta.insert("step".into(), step.to_string());
    meta.insert("action_dim".into(), sac.action_dim.to_string());
    meta.insert("actor_spec".into(), serde_json::to_string(&sac.actor.spec)?);
    meta.insert("sac".into(), serde_json::to_string(&sac.config)?);
    checkpoint::save(path, &tensors, &meta)
}

/// Rebuilds an agent from [`save_policy`] output. Targets are set equal
/// to the critics; optimizer state starts fresh.
pub fn load_policy(path: &Path) -> Result<(Sac, BTreeMap<String, String>)> {
    let (tensors, meta) = checkpoint::load(path)?;
    let missing = |k: &str| Error::Checkpoint {
        path: PathBuf::from(path),
        reason: format!("metadata lacks {k}"),
    };
    let spec: NetSpec = serde_json::from_str(meta.get("actor_spec").ok_or_else(|| missing("actor_spec"))?)?;
    let config: SacConfig = serde_json::from_str(meta.get("sac").ok_or_else(|| missing("sac"))?)?;
    let action_dim: usize = meta
        .get("action_dim")
        .ok_or_else(|| missing("action_dim"))?
        .parse()
        .map_err(|_| missing("a numeric action_dim"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sac = Sac::new(config, spec, action_dim, &mut rng)?;
    for (prefix, net) in [("actor", &mut sac.actor), ("q1", &mut sac.q1), ("q2", &mut sac.q2)] {
        let sub: BTreeMap<String, Tensor<f32>> = tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&format!("{prefix}.")).map(|s| (s.to_string(), v.clone())))
            .collect();
        net.load_named(&sub).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: PathBuf::from(path),
                reason,
            },
            other => other,
        })?;
    }
    sac.q1_target.copy_from(&sac.q1)?;
    sac.q2_target.copy_from(&sac.q2)?;
    Ok((sac, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ma = new_agent(AgentKind::Ma, &ArchConfig::ma_full(), SacConfig::default(), &mut rng).unwrap();
        // scalar 64->256->256->256->256: 16 640 + 3·65 792 = 214 016
        // conv 8·8·1·16+16 = 1 040, 4·4·16·32+32 = 8 224, flat 4·9·32 = 1 152
        // visual dense 1 152·256+256 = 295 168, + 3·65 792 = 197 376
        // head 512·8+8 = 4 104
        assert_eq!(ma.actor.param_count(), 214_016 + 1_040 + 8_224 + 295_168 + 197_376 + 4_104);
        let mpa = new_agent(AgentKind::Mpa, &ArchConfig::mpa_full(), SacConfig::default(), &mut rng).unwrap();
        // conv 9 264, dense 1 152·128+128 = 147 584, 2·16 512 = 33 024, head 128·2+2 = 258
        assert_eq!(mpa.actor.param_count(), 9_264 + 147_584 + 33_024 + 258);
    }

    #[test]
    fn target_mapping() {
        assert_eq!(target_from_action(0.0, 2.75), 0.0);
        assert_eq!(target_from_action(1.0, 2.75), 2.75);
        assert_eq!(target_from_action(-1.0, 2.75), -2.75);
        for a in [-0.9, -0.3, 0.0, 0.41, 0.99] {
            assert!((action_from_target(target_from_action(a, 2.75), 2.75) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn variant_parse_and_flags() {
        assert_eq!("B".parse::<Variant>().unwrap(), Variant::B);
        assert!("D".parse::<Variant>().is_err());
        assert!(Variant::A.uses_mpa() && !Variant::B.uses_mpa());
        assert!(!Variant::C.energy_penalty());
    }

    #[test]
    fn checkpoint_name_format() {
        assert_eq!(checkpoint_name(AgentKind::Ma, Variant::B, 5000), "ma-B-5000.ckpt");
    }
}

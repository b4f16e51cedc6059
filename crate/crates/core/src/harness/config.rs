use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{ArchConfig, Variant};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::sac::SacConfig;
use crate::soil::PileSpec;

/// One curriculum stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub sequence_length: usize,
    pub max_generation: u32,
}

/// Three lessons, each owning a share of a phase's step budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    pub lessons: [Lesson; 3],
    pub fractions: [f64; 3],
}

impl Default for Curriculum {
    fn default() -> Self {
        Self::standard()
    }
}

impl Curriculum {
    pub fn standard() -> Self {
        Self {
            lessons: [
                Lesson {
                    sequence_length: 10,
                    max_generation: 0,
                },
                Lesson {
                    sequence_length: 15,
                    max_generation: 1,
                },
                Lesson {
                    sequence_length: 20,
                    max_generation: 2,
                },
            ],
            fractions: [1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(*f >= 0.0)) || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("curriculum fractions must be non-negative and sum to 1".into()));
        }
        let mono = self.lessons.windows(2).all(|w| {
            w[0].sequence_length <= w[1].sequence_length && w[0].max_generation <= w[1].max_generation
        });
        if !mono || self.lessons.iter().any(|l| l.sequence_length == 0) {
            return Err(Error::Config("lessons must be non-empty and non-decreasing".into()));
        }
        Ok(())
    }

    /// First step of each lesson within a phase of `budget` steps.
    pub fn starts(&self, budget: u64) -> [u64; 3] {
        let b = budget as f64;
        let s1 = (b * self.fractions[0]).round() as u64;
        let s2 = (b * (self.fractions[0] + self.fractions[1])).round() as u64;
        [0, s1, s2]
    }

    pub fn lesson_index(&self, step: u64, budget: u64) -> usize {
        let s = self.starts(budget);
        if step >= s[2] {
            2
        } else if step >= s[1] {
            1
        } else {
            0
        }
    }

    pub fn last(&self) -> Lesson {
        self.lessons[2]
    }
}

/// Training stage, run in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPhase {
    MaPretrain,
    MpaWithFrozenMa,
    Joint,
}

impl TrainPhase {
    pub const ALL: [TrainPhase; 3] = [TrainPhase::MaPretrain, TrainPhase::MpaWithFrozenMa, TrainPhase::Joint];

    pub fn name(self) -> &'static str {
        match self {
            TrainPhase::MaPretrain => "ma_pretrain",
            TrainPhase::MpaWithFrozenMa => "mpa_with_frozen_ma",
            TrainPhase::Joint => "joint",
        }
    }

    pub fn trains_ma(self) -> bool {
        self != TrainPhase::MpaWithFrozenMa
    }

    pub fn uses_mpa(self) -> bool {
        self != TrainPhase::MaPretrain
    }

    pub fn uses_curriculum(self) -> bool {
        self.trains_ma()
    }
}

/// Environment-step budget per phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseBudgets {
    pub ma_pretrain: u64,
    pub mpa_with_frozen_ma: u64,
    pub joint: u64,
}

impl Default for PhaseBudgets {
    fn default() -> Self {
        Self {
            ma_pretrain: 120_000,
            mpa_with_frozen_ma: 20_000,
            joint: 60_000,
        }
    }
}

impl PhaseBudgets {
    pub fn get(&self, phase: TrainPhase) -> u64 {
        match phase {
            TrainPhase::MaPretrain => self.ma_pretrain,
            TrainPhase::MpaWithFrozenMa => self.mpa_with_frozen_ma,
            TrainPhase::Joint => self.joint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub arch: ArchConfig,
    pub sac: SacConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        TrainConfig::desk().ma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub run_id: String,
    pub seed: u64,
    pub variant: Variant,
    /// Environments stepped in round-robin order by the single learner.
    pub workers: usize,
    pub budgets: PhaseBudgets,
    pub curriculum: Curriculum,
    /// Generation-0 piles of the training pool.
    pub piles: Vec<PileSpec>,
    /// Mucking-agent updates between metrics rows.
    pub metrics_every: u64,
    /// Environment steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Write the full trainer state next to each checkpoint for resuming.
    pub save_trainer_state: bool,
    pub env: EnvConfig,
    pub ma: AgentConfig,
    pub mpa: AgentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small networks and a 2e5-step budget for a single CPU.
    pub fn desk() -> Self {
        let fast = SacConfig {
            batch_size: 64,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            buffer_capacity: 100_000,
            warmup_steps: 2_000,
            ..SacConfig::default()
        };
        Self {
            run_id: "desk".into(),
            seed: 0,
            variant: Variant::A,
            workers: 1,
            budgets: PhaseBudgets::default(),
            curriculum: Curriculum::standard(),
            piles: PileSpec::initial_set().to_vec(),
            metrics_every: 100,
            checkpoint_every: 20_000,
            save_trainer_state: true,
            env: EnvConfig::default(),
            ma: AgentConfig {
                arch: ArchConfig {
                    scalar_hidden: vec![128, 128],
                    visual_hidden: vec![128],
                    camera: false,
                    ..ArchConfig::ma_full()
                },
                sac: fast.clone(),
            },
            mpa: AgentConfig {
                arch: ArchConfig {
                    visual_hidden: vec![64, 64],
                    ..ArchConfig::mpa_full()
                },
                sac: SacConfig {
                    batch_size: 32,
                    buffer_capacity: 10_000,
                    warmup_steps: 40,
                    updates_per_step: 4,
                    ..fast
                },
            },
        }
    }

    /// Network sizes and hyperparameters of the original controller.
    pub fn full() -> Self {
        Self {
            run_id: "full".into(),
            budgets: PhaseBudgets {
                ma_pretrain: 6_000_000,
                mpa_with_frozen_ma: 500_000,
                joint: 3_000_000,
            },
            checkpoint_every: 250_000,
            env: EnvConfig {
                ma_camera: true,
                ..EnvConfig::default()
            },
            ma: AgentConfig {
                arch: ArchConfig::ma_full(),
                sac: SacConfig::default(),
            },
            mpa: AgentConfig {
                arch: ArchConfig::mpa_full(),
                sac: SacConfig {
                    buffer_capacity: 100_000,
                    warmup_steps: 256,
                    ..SacConfig::default()
                },
            },
            ..Self::desk()
        }
    }

    /// Mucking agent alone on the simplified pile with random targets.
    pub fn simple() -> Self {
        let mut cfg = Self {
            run_id: "simple".into(),
            variant: Variant::B,
            budgets: PhaseBudgets {
                ma_pretrain: 200_000,
                mpa_with_frozen_ma: 0,
                joint: 0,
            },
            piles: vec![PileSpec::simplified()],
            ..Self::desk()
        };
        cfg.ma.sac.updates_per_step = 2;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "simple" => Ok(Self::simple()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset {other:?}, expected desk, simple or full"))),
        }
    }

    /// The environment as trained for this variant: C drops the energy
    /// penalty and nothing else.
    pub fn effective_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if !self.variant.energy_penalty() {
            env.weights.w2 = 0.0;
        }
        env
    }

    /// Phases this variant runs, in order, skipping empty budgets.
    pub fn phases(&self) -> Vec<TrainPhase> {
        TrainPhase::ALL
            .into_iter()
            .filter(|p| self.variant.uses_mpa() || !p.uses_mpa())
            .filter(|p| self.budgets.get(*p) > 0)
            .collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.phases().iter().map(|p| self.budgets.get(*p)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ma.sac.validate()?;
        self.mpa.sac.validate()?;
        self.curriculum.validate()?;
        if self.piles.is_empty() {
            return Err(Error::Config("at least one training pile is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.metrics_every == 0 {
            return Err(Error::Config("metrics_every must be positive".into()));
        }
        if self.ma.arch.camera != self.env.ma_camera {
            return Err(Error::Config("ma.arch.camera and env.ma_camera disagree".into()));
        }
        if self.variant.uses_mpa() && !self.mpa.arch.camera {
            return Err(Error::Config("the position agent needs its camera".into()));
        }
        if self.phases().is_empty() {
            return Err(Error::Config("every phase budget is zero".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lessons_split_budget_in_thirds() {
        let c = Curriculum::standard();
        assert_eq!(c.starts(90), [0, 30, 60]);
        assert_eq!(c.lesson_index(29, 90), 0);
        assert_eq!(c.lesson_index(30, 90), 1);
        assert_eq!(c.lesson_index(89, 90), 2);
    }

    #[test]
    fn toml_round_trip() {
        for cfg in [TrainConfig::desk(), TrainConfig::simple(), TrainConfig::full()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = TrainConfig::from_toml("seed = 9\nvariant = \"B\"\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ma, TrainConfig::desk().ma);
    }

    #[test]
    fn variant_c_only_drops_energy_weight() {
        let b = TrainConfig {
            variant: Variant::B,
            ..TrainConfig::desk()
        };
        let c = TrainConfig {
            variant: Variant::C,
            ..b.clone()
        };
        let (eb, ec) = (b.effective_env(), c.effective_env());
        assert_eq!(ec.weights.w2, 0.0);
        assert_eq!(EnvConfig { weights: eb.weights, ..ec }, eb);
        assert_eq!(b.phases(), c.phases());
    }

    #[test]
    fn random_target_variants_skip_position_phases() {
        let b = TrainConfig {
            variant: Variant::B,
            ..TrainConfig::desk()
        };
        assert_eq!(b.phases(), vec![TrainPhase::MaPretrain]);
        assert_eq!(TrainConfig::desk().phases(), TrainPhase::ALL.to_vec());
    }

    #[test]
    fn camera_mismatch_rejected() {
        let mut cfg = TrainConfig::desk();
        cfg.env.ma_camera = true;
        assert!(cfg.validate().is_err());
    }
}

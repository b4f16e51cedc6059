//! Evaluation campaigns and the statistics behind the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{MaAgent, MpaAgent, Variant};
use crate::env::{run_loading, EnvConfig, LoadingEnv, MaController, RandomTargets, SoilMode, TargetSelector};
use crate::error::{Error, Result};
use crate::geometry::DriftGeometry;
use crate::sac::{ActMode, Sac};
use crate::sensors::StackedObservation;
use crate::soil::{generate_pile, PileSpec, SoilParams};
use crate::vehicle::ActuatorCommand;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub run_id: String,
    pub seed: u64,
    pub variant: Variant,
    /// Pile resets; sequence `s` starts from initial pile `s mod 4`.
    pub sequences: usize,
    pub sequence_length: usize,
    pub env: EnvConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            run_id: "eval".into(),
            seed: 0,
            variant: Variant::A,
            sequences: 4,
            sequence_length: 20,
            env: EnvConfig::default(),
        }
    }
}

/// One line of the outcome CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub run_id: String,
    pub variant: String,
    pub pile_shape: String,
    pub generation: u32,
    pub loading_index: usize,
    pub target_x: f64,
    pub final_x: f64,
    pub mass_t: f64,
    pub duration_s: f64,
    #[serde(rename = "energy_J")]
    pub energy_j: f64,
    pub failed: bool,
}

impl OutcomeRow {
    pub fn productivity(&self) -> f64 {
        if self.duration_s > 0.0 {
            self.mass_t / self.duration_s
        } else {
            0.0
        }
    }

    pub fn position_error(&self) -> f64 {
        (self.final_x - self.target_x).abs()
    }
}

/// Runs `sequences × sequence_length` loadings at the upper density limit.
pub fn evaluate(
    cfg: &EvalConfig,
    ma: &mut dyn MaController,
    selector: &mut dyn TargetSelector,
) -> Result<Vec<OutcomeRow>> {
    if cfg.sequences == 0 || cfg.sequence_length == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one loading".into()));
    }
    let env_cfg = EnvConfig {
        soil_mode: SoilMode::Evaluation,
        sequence_length: cfg.sequence_length,
        ..cfg.env.clone()
    };
    let drift = DriftGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs = PileSpec::initial_set();
    let piles = specs
        .iter()
        .map(|s| generate_pile(s, &drift, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut env = LoadingEnv::new(env_cfg, piles[0].clone(), SoilParams::evaluation())?;
    let mut rows = Vec::with_capacity(cfg.sequences * cfg.sequence_length);
    for s in 0..cfg.sequences {
        let p = s % piles.len();
        let soil = env.draw_soil(&mut rng);
        env.set_pile(piles[p].clone(), soil);
        for index in 0..cfg.sequence_length {
            let target = selector.select(&env)?;
            let o = run_loading(&mut env, target, ma)?;
            rows.push(OutcomeRow {
                run_id: cfg.run_id.clone(),
                variant: cfg.variant.to_string(),
                pile_shape: specs[p].shape.name().to_string(),
                generation: (index / env.config.loadings_per_pile_save) as u32,
                loading_index: index,
                target_x: o.target_x,
                final_x: o.final_x,
                mass_t: o.loaded_mass,
                duration_s: o.duration,
                energy_j: o.energy,
                failed: o.failed,
            });
        }
    }
    Ok(rows)
}

/// Deterministic evaluation of trained policies. Without a position agent
/// targets are drawn uniformly.
pub fn evaluate_policies(cfg: &EvalConfig, ma: &Sac, mpa: Option<&Sac>) -> Result<Vec<OutcomeRow>> {
    let mut ma = MaAgent::new(ma, ActMode::Deterministic, cfg.seed);
    match mpa {
        Some(m) => evaluate(cfg, &mut ma, &mut MpaAgent::new(m, ActMode::Deterministic, cfg.seed)),
        None => evaluate(
            cfg,
            &mut ma,
            &mut RandomTargets {
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
            },
        ),
    }
}

pub fn write_outcomes(path: &Path, rows: &[OutcomeRow]) -> Result<()> {
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

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Arithmetic mean; NaN for no samples.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); zero for a single sample.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub loadings: usize,
    pub mass_t: Stat,
    pub productivity: Stat,
    pub energy_mj: Stat,
    pub position_error: Stat,
    pub failure_ratio: f64,
}

impl Summary {
    pub fn of(rows: &[&OutcomeRow]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let col = |f: &dyn Fn(&OutcomeRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        Some(Self {
            loadings: rows.len(),
            mass_t: Stat::of(&col(&|r| r.mass_t)),
            productivity: Stat::of(&col(&OutcomeRow::productivity)),
            energy_mj: Stat::of(&col(&|r| r.energy_j / 1e6)),
            position_error: Stat::of(&col(&OutcomeRow::position_error)),
            failure_ratio: rows.iter().filter(|r| r.failed).count() as f64 / rows.len() as f64,
        })
    }
}

pub const HISTOGRAM_BINS: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub pile_shape: String,
    /// Bin edges over the usable lateral range.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMasses {
    pub loading_index: usize,
    pub masses: Vec<f64>,
    pub mean: f64,
}

/// Least-squares line through mean mass per loading index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub std_err: f64,
}

impl Trend {
    /// Slope more than two standard errors below zero.
    pub fn significantly_negative(&self) -> bool {
        self.slope + 2.0 * self.std_err < 0.0
    }
}

pub fn linear_trend(xs: &[f64], ys: &[f64]) -> Trend {
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (my + slope * (x - mx));
            e * e
        })
        .sum();
    let std_err = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Trend { slope, std_err }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub variant: String,
    pub all: Summary,
    pub completed: Option<Summary>,
    pub histograms: Vec<PositionHistogram>,
    pub per_index: Vec<IndexMasses>,
    pub mass_trend: Option<Trend>,
}

impl EvalReport {
    pub fn from_rows(rows: &[OutcomeRow], lateral_range: f64) -> Result<Self> {
        let all_refs: Vec<&OutcomeRow> = rows.iter().collect();
        let all = Summary::of(&all_refs).ok_or_else(|| Error::InvalidArgument("no outcomes to report".into()))?;
        let done: Vec<&OutcomeRow> = rows.iter().filter(|r| !r.failed).collect();

        let width = 2.0 * lateral_range / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| -lateral_range + i as f64 * width).collect();
        let mut by_shape: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for r in rows {
            let counts = by_shape.entry(&r.pile_shape).or_insert_with(|| vec![0; HISTOGRAM_BINS]);
            let b = (((r.target_x + lateral_range) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        let histograms = by_shape
            .into_iter()
            .map(|(shape, counts)| PositionHistogram {
                pile_shape: shape.to_string(),
                edges: edges.clone(),
                counts,
            })
            .collect();

        let mut by_index: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rows {
            by_index.entry(r.loading_index).or_default().push(r.mass_t);
        }
        let per_index: Vec<IndexMasses> = by_index
            .into_iter()
            .map(|(loading_index, masses)| IndexMasses {
                loading_index,
                mean: mean(&masses),
                masses,
            })
            .collect();
        let mass_trend = (per_index.len() >= 2).then(|| {
            let xs: Vec<f64> = per_index.iter().map(|p| p.loading_index as f64).collect();
            let ys: Vec<f64> = per_index.iter().map(|p| p.mean).collect();
            linear_trend(&xs, &ys)
        });

        Ok(Self {
            run_id: rows[0].run_id.clone(),
            variant: rows[0].variant.clone(),
            all,
            completed: Summary::of(&done),
            histograms,
            per_index,
            mass_trend,
        })
    }

    /// Plain-text table with one row over all loadings and one over
    /// completed loadings.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>14} {:>16} {:>14} {:>14} {:>8}",
            "rows", "n", "mass (t)", "prod. (t/s)", "energy (MJ)", "pos. err (m)", "failed"
        );
        let mut line = |name: &str, m: &Summary| {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>6.2} ± {:<5.2} {:>7.3} ± {:<6.3} {:>6.2} ± {:<5.2} {:>6.2} ± {:<5.2} {:>7.1}%",
                name,
                m.loadings,
                m.mass_t.mean,
                m.mass_t.std,
                m.productivity.mean,
                m.productivity.std,
                m.energy_mj.mean,
                m.energy_mj.std,
                m.position_error.mean,
                m.position_error.std,
                100.0 * m.failure_ratio
            );
        };
        line("all", &self.all);
        if let Some(c) = &self.completed {
            line("completed", c);
        }
        if let Some(t) = &self.mass_trend {
            let _ = writeln!(s, "mass trend over loading index: {:+.4} ± {:.4} t/loading", t.slope, t.std_err);
        }
        s
    }
}

/// Uniformly random actions; the learning baseline.
#[derive(Clone, Debug)]
pub struct RandomController {
    pub rng: ChaCha8Rng,
}

impl MaController for RandomController {
    fn act(&mut self, _: &StackedObservation) -> Result<ActuatorCommand> {
        let mut a = [0.0f32; 4];
        for v in &mut a {
            *v = self.rng.random_range(-1.0..=1.0);
        }
        Ok(ActuatorCommand::from_slice(&a))
    }
}

/// Hand-written loading cycle with access to the simulator state: drive
/// in on the target, lift to keep a shallow cut, then curl and hold.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedLoader {
    stage: u8,
}

impl ScriptedLoader {
    pub fn command(&mut self, env: &LoadingEnv) -> ActuatorCommand {
        let s = env.state();
        let cut = env.model.bucket_engagement(s, &env.heightfield);
        let steer = (-0.8 * env.lateral_error() - 2.0 * s.heading).clamp(-1.0, 1.0);
        if self.stage == 0 && cut.depth > 0.0 {
            self.stage = 1;
        }
        if self.stage == 1 && (s.fill_fraction > 0.95 || s.lift > 0.9 || (s.forward_speed < 0.01 && env.clock() > 15.0)) {
            self.stage = 2;
        }
        match self.stage {
            0 => ActuatorCommand::new(1.0, steer, 0.0, 0.0),
            1 => ActuatorCommand::new(1.0, 0.0, ((cut.depth - 0.15) * 8.0).clamp(-1.0, 1.0), 0.1),
            _ => ActuatorCommand::new(0.0, 0.0, 1.0, 1.0),
        }
    }
}

pub fn run_scripted_loading(env: &mut LoadingEnv, target_x: f64) -> Result<crate::env::LoadingOutcome> {
    env.reset_loading(target_x)?;
    let mut script = ScriptedLoader::default();
    loop {
        let cmd = script.command(env);
        if let Some(o) = env.step_ma(&cmd)?.outcome {
            return Ok(o);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ConstantController;

    fn row(mass: f64, dur: f64, failed: bool, index: usize) -> OutcomeRow {
        OutcomeRow {
            run_id: "t".into(),
            variant: "B".into(),
            pile_shape: "convex".into(),
            generation: 0,
            loading_index: index,
            target_x: 0.5,
            final_x: 0.25,
            mass_t: mass,
            duration_s: dur,
            energy_j: 1.0e6,
            failed,
        }
    }

    #[test]
    fn sample_std() {
        assert_eq!(std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), (32.0f64 / 7.0).sqrt());
        assert_eq!(std_dev(&[3.0]), 0.0);
    }

    #[test]
    fn trend_of_exact_line() {
        let t = linear_trend(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.5, 0.0, -0.5]);
        assert_eq!(t.slope, -0.5);
        assert_eq!(t.std_err, 0.0);
        assert!(t.significantly_negative());
    }

    #[test]
    fn completed_row_drops_failures() {
        let rows = vec![row(10.0, 20.0, false, 0), row(0.0, 48.0, true, 1)];
        let r = EvalReport::from_rows(&rows, 2.75).unwrap();
        assert_eq!(r.all.failure_ratio, 0.5);
        let c = r.completed.unwrap();
        assert_eq!(c.loadings, 1);
        assert_eq!(c.mass_t.mean, 10.0);
        assert_eq!(c.productivity.mean, 0.5);
    }

    #[test]
    fn histogram_bins_cover_range() {
        let mut rows = vec![row(1.0, 1.0, false, 0); 3];
        rows[0].target_x = -2.75;
        rows[1].target_x = 2.75;
        rows[2].target_x = 0.0;
        let r = EvalReport::from_rows(&rows, 2.75).unwrap();
        let h = &r.histograms[0];
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[HISTOGRAM_BINS - 1], 1);
        assert_eq!(h.counts[HISTOGRAM_BINS / 2], 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn idle_controller_always_fails() {
        let cfg = EvalConfig {
            sequences: 1,
            sequence_length: 2,
            ..EvalConfig::default()
        };
        let rows = evaluate(
            &cfg,
            &mut ConstantController::default(),
            &mut RandomTargets {
                rng: ChaCha8Rng::seed_from_u64(1),
            },
        )
        .unwrap();
        let r = EvalReport::from_rows(&rows, 2.75).unwrap();
        assert_eq!(r.all.failure_ratio, 1.0);
        assert_eq!(r.all.mass_t.mean, 0.0);
        assert!(r.completed.is_none());
    }
}

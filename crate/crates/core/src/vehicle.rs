//! Planar articulated loader.
//!
//! The front frame carries the boom and bucket; the rear frame is joined at
//! the waist hinge. Pose is tracked at the front axle centre with the front
//! frame heading measured from `+y` towards `+x`. Lift and tilt are
//! normalized cylinder extensions in `[0, 1]`; the cutting edge rises with
//! both and moves forward while the bucket curls.
//!
//! Actuator forces and velocities are expressed at the bucket edge (lift,
//! tilt) or at an equivalent steering lever, so `|F · v| · dt` is the work
//! each actuator delivers.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result};
use crate::geometry::DriftGeometry;
use crate::soil::{CutState, Heightfield, SweptRegion, GRAVITY, MAX_DENSITY};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    /// Edge travel over the full normalized range (m).
    pub stroke: f64,
    /// m/s
    pub max_speed: f64,
    /// N
    pub max_force: f64,
}

impl ActuatorParams {
    /// Normalized extension rate at full command (1/s).
    pub fn rate_limit(&self) -> f64 {
        self.max_speed / self.stroke
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub total_mass: f64,
    pub bucket_mass: f64,
    /// m
    pub bucket_width: f64,
    /// kg at the upper density limit
    pub bucket_capacity_mass: f64,
    /// m³
    pub bucket_capacity_volume: f64,
    pub bucket_depth: f64,
    pub body_width: f64,
    /// Hinge to front axle (m).
    pub front_length: f64,
    /// Hinge to rear axle (m).
    pub rear_length: f64,
    pub rear_overhang: f64,
    /// Front axle to cutting edge with the bucket flat (m).
    pub bucket_reach: f64,
    /// Forward travel of the edge over a full curl (m).
    pub curl_reach: f64,
    /// Edge rise over a full curl (m).
    pub curl_rise: f64,
    pub max_articulation: f64,
    /// m/s, governed top speed in either direction.
    pub max_speed: f64,
    pub governor_band: f64,
    pub stall_force: f64,
    /// W
    pub engine_power_max: f64,
    pub speed_epsilon: f64,
    pub rolling_coefficient: f64,
    pub traction_coefficient: f64,
    /// Static share of vehicle weight on the front axle.
    pub front_axle_share: f64,
    /// Multiplier on load weight transferred to the front axle.
    pub load_geometry_factor: f64,
    /// Share of dig resistance opposing a lifting / curling edge.
    pub lift_dig_share: f64,
    pub tilt_dig_share: f64,
    pub steer_dig_share: f64,
    pub steer_base_force: f64,
    /// Advance multiplier while the wheels slip.
    pub slip_advance_factor: f64,
    /// Wheel surface speed assumed while spinning in place (m/s).
    pub slip_speed: f64,
    /// Highest soil step the front wheels can climb (m).
    pub climb_limit: f64,
    pub lift: ActuatorParams,
    pub tilt: ActuatorParams,
    pub steer: ActuatorParams,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let capacity_mass = 17_500.0;
        Self {
            total_mass: 50_000.0,
            bucket_mass: 3_000.0,
            bucket_width: 3.5,
            bucket_capacity_mass: capacity_mass,
            bucket_capacity_volume: capacity_mass / MAX_DENSITY,
            bucket_depth: 1.5,
            body_width: 2.9,
            front_length: 1.8,
            rear_length: 1.8,
            rear_overhang: 2.5,
            bucket_reach: 2.7,
            curl_reach: 0.5,
            curl_rise: 0.8,
            max_articulation: 0.7,
            max_speed: 1.6,
            governor_band: 0.2,
            stall_force: 250_000.0,
            engine_power_max: 250_000.0,
            speed_epsilon: 0.1,
            rolling_coefficient: 0.02,
            traction_coefficient: 0.6,
            front_axle_share: 0.5,
            load_geometry_factor: 1.4,
            lift_dig_share: 0.5,
            tilt_dig_share: 0.3,
            steer_dig_share: 0.1,
            steer_base_force: 80_000.0,
            slip_advance_factor: 0.25,
            slip_speed: 0.3,
            climb_limit: 0.6,
            lift: ActuatorParams {
                stroke: 3.5,
                max_speed: 0.875,
                max_force: 300_000.0,
            },
            tilt: ActuatorParams {
                stroke: 0.8,
                max_speed: 0.32,
                max_force: 250_000.0,
            },
            steer: ActuatorParams {
                stroke: 0.5,
                max_speed: 0.15,
                max_force: 200_000.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Front axle centre (m).
    pub x: f64,
    pub y: f64,
    /// Front frame heading (rad), 0 = facing the pile.
    pub heading: f64,
    /// Waist angle (rad).
    pub articulation: f64,
    pub lift: f64,
    pub tilt: f64,
    /// Centre-shaft (longitudinal) speed, m/s.
    pub forward_speed: f64,
    /// Realized normalized actuator rates (1/s).
    pub lift_rate: f64,
    pub tilt_rate: f64,
    pub steer_rate: f64,
    /// Actuator forces from the last step (N).
    pub lift_force: f64,
    pub tilt_force: f64,
    pub steer_force: f64,
    pub fill_volume: f64,
    pub fill_fraction: f64,
    pub wall_contact: bool,
    pub wheel_slip: bool,
}

impl VehicleState {
    /// Parked at `(x, y)` facing the pile, bucket flat on the floor and empty.
    pub fn parked(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            ..Self::default()
        }
    }

    pub fn forward(&self) -> (f64, f64) {
        (self.heading.sin(), self.heading.cos())
    }

    /// Centre of the cutting edge in the plane.
    pub fn bucket_tip(&self, p: &VehicleParams) -> (f64, f64) {
        let reach = p.bucket_reach + p.curl_reach * self.tilt;
        let (fx, fy) = self.forward();
        (self.x + reach * fx, self.y + reach * fy)
    }

    pub fn edge_height(&self, p: &VehicleParams) -> f64 {
        self.lift * p.lift.stroke + self.tilt * p.curl_rise
    }

    pub fn load_mass(&self, density: f64) -> f64 {
        self.fill_volume * density
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub throttle: f64,
    pub steer_rate: f64,
    pub lift_rate: f64,
    pub tilt_rate: f64,
}

impl ActuatorCommand {
    pub fn new(throttle: f64, steer_rate: f64, lift_rate: f64, tilt_rate: f64) -> Self {
        Self {
            throttle,
            steer_rate,
            lift_rate,
            tilt_rate,
        }
    }

    pub fn from_slice(a: &[f32]) -> Self {
        Self::new(a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64)
    }

    pub fn clamped(&self) -> Self {
        Self::new(
            self.throttle.clamp(-1.0, 1.0),
            self.steer_rate.clamp(-1.0, 1.0),
            self.lift_rate.clamp(-1.0, 1.0),
            self.tilt_rate.clamp(-1.0, 1.0),
        )
    }

    pub fn check_finite(&self) -> Result<()> {
        ensure_finite("throttle", self.throttle)?;
        ensure_finite("steer rate", self.steer_rate)?;
        ensure_finite("lift rate", self.lift_rate)?;
        ensure_finite("tilt rate", self.tilt_rate)
    }
}

/// Work delivered since the previous action (J), all non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkBreakdown {
    pub p_tilt: f64,
    pub p_lift: f64,
    pub p_steer: f64,
    pub p_engine: f64,
}

impl WorkBreakdown {
    pub fn accumulate(&mut self, o: &WorkBreakdown) {
        self.p_tilt += o.p_tilt;
        self.p_lift += o.p_lift;
        self.p_steer += o.p_steer;
        self.p_engine += o.p_engine;
    }

    /// Unweighted sum: the energy actually spent.
    pub fn total(&self) -> f64 {
        self.p_tilt + self.p_lift + self.p_steer + self.p_engine
    }

    /// Reward-side work with engine work down-weighted by 5.
    pub fn weighted(&self) -> f64 {
        self.p_tilt + self.p_lift + self.p_steer + self.p_engine / 5.0
    }
}

/// Force and velocity pairs of one step, in actuator coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActuatorLoads {
    pub tilt: (f64, f64),
    pub lift: (f64, f64),
    pub steer: (f64, f64),
    /// Drive force and wheel surface speed.
    pub engine: (f64, f64),
}

pub fn actuator_work(loads: &ActuatorLoads, dt: f64) -> WorkBreakdown {
    let w = |(f, v): (f64, f64)| (f * v).abs() * dt;
    WorkBreakdown {
        p_tilt: w(loads.tilt),
        p_lift: w(loads.lift),
        p_steer: w(loads.steer),
        p_engine: w(loads.engine),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub wall_contact: bool,
    pub wheel_slip: bool,
    /// Front wheels stopped by a soil step above the climb limit.
    pub blocked: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: VehicleState,
    pub work: WorkBreakdown,
    pub flags: StepFlags,
    pub required_drawbar: f64,
    pub traction_limit: f64,
}

/// Vehicle dynamics bound to a drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleModel {
    pub params: VehicleParams,
    pub drift: DriftGeometry,
}

impl VehicleModel {
    pub fn new(params: VehicleParams, drift: DriftGeometry) -> Self {
        Self { params, drift }
    }

    /// Normal load on the front axle (N).
    pub fn front_normal_load(&self, load_mass: f64, pry_force: f64) -> f64 {
        let p = &self.params;
        p.total_mass * GRAVITY * p.front_axle_share
            + load_mass * GRAVITY * p.load_geometry_factor
            + pry_force.max(0.0)
    }

    /// Wheel slip as a pure threshold on drawbar demand.
    pub fn slips(&self, required_drawbar: f64, normal_load: f64) -> bool {
        required_drawbar > self.params.traction_coefficient * normal_load
    }

    /// Speed-dependent drive force cap, including the top-speed governor.
    pub fn max_drive_force(&self, speed: f64, power: f64) -> f64 {
        let p = &self.params;
        let v = speed.abs();
        let base = p.stall_force.min(power / v.max(p.speed_epsilon));
        let governor = ((p.max_speed - v) / p.governor_band).clamp(0.0, 1.0);
        base * governor
    }

    /// Advances the vehicle by `dt` under `cmd` against dig `resistance`.
    ///
    /// `terrain` is consulted only for the front-wheel climb limit.
    /// `density` converts bucket volume to load mass.
    pub fn step(
        &self,
        state: &VehicleState,
        cmd: &ActuatorCommand,
        resistance: f64,
        density: f64,
        terrain: &Heightfield,
        dt: f64,
    ) -> Result<StepResult> {
        cmd.check_finite()?;
        ensure_finite("resistance", resistance)?;
        ensure_finite("dt", dt)?;
        if dt <= 0.0 {
            return Err(crate::Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let p = &self.params;
        let cmd = cmd.clamped();
        let resistance = resistance.max(0.0);
        let engaged = resistance > 0.0;
        let load_mass = state.load_mass(density);
        let mass = p.total_mass + load_mass;

        // Engine power split in proportion to command magnitudes.
        let demand = cmd.throttle.abs() + cmd.lift_rate.abs() + cmd.tilt_rate.abs() + cmd.steer_rate.abs();
        let share = |c: f64| if demand > 0.0 { p.engine_power_max * c.abs() / demand } else { 0.0 };

        let mut next = *state;

        // Hydraulics.
        let lift_force = (p.bucket_mass + load_mass) * GRAVITY
            + if engaged && cmd.lift_rate > 0.0 { p.lift_dig_share * resistance } else { 0.0 };
        let tilt_force = 0.4 * load_mass * GRAVITY
            + if engaged && cmd.tilt_rate > 0.0 { p.tilt_dig_share * resistance } else { 0.0 };
        let steer_force = p.steer_base_force
            + 0.2 * load_mass * GRAVITY
            + if engaged { p.steer_dig_share * resistance } else { 0.0 };

        let (lift_v, lift_rate) =
            actuate(&p.lift, cmd.lift_rate, lift_force, share(cmd.lift_rate), state.lift, 0.0, 1.0, dt);
        let (tilt_v, tilt_rate) =
            actuate(&p.tilt, cmd.tilt_rate, tilt_force, share(cmd.tilt_rate), state.tilt, 0.0, 1.0, dt);
        let steer_norm = state.articulation / p.max_articulation;
        let (steer_v, steer_rate) =
            actuate(&p.steer, cmd.steer_rate, steer_force, share(cmd.steer_rate), steer_norm, -1.0, 1.0, dt);

        next.lift = (state.lift + lift_rate * dt).clamp(0.0, 1.0);
        next.tilt = (state.tilt + tilt_rate * dt).clamp(0.0, 1.0);
        next.articulation = ((steer_norm + steer_rate * dt).clamp(-1.0, 1.0)) * p.max_articulation;
        next.lift_rate = lift_rate;
        next.tilt_rate = tilt_rate;
        next.steer_rate = steer_rate;
        next.lift_force = lift_force;
        next.tilt_force = tilt_force;
        next.steer_force = steer_force;

        // Traction.
        let pry = if engaged {
            resistance * (p.lift_dig_share * cmd.lift_rate.max(0.0) + p.tilt_dig_share * cmd.tilt_rate.max(0.0))
        } else {
            0.0
        };
        let normal = self.front_normal_load(load_mass, pry);
        let traction_limit = p.traction_coefficient * normal;

        let v = state.forward_speed;
        let drive = cmd.throttle * self.max_drive_force(v, share(cmd.throttle));
        let required_drawbar = if drive > 0.0 { drive.min(resistance) } else { 0.0 };
        let slip = self.slips(required_drawbar, normal);
        let transmitted = if slip { traction_limit } else { drive };

        // Longitudinal dynamics with Coulomb-like resistances.
        let rolling = p.rolling_coefficient * mass * GRAVITY;
        let mut v_new = if v > 0.0 {
            let nv = v + (transmitted - rolling - resistance) / mass * dt;
            if nv < 0.0 { 0.0 } else { nv }
        } else if v < 0.0 {
            let nv = v + (transmitted + rolling) / mass * dt;
            if nv > 0.0 { 0.0 } else { nv }
        } else if transmitted > rolling + resistance {
            (transmitted - rolling - resistance) / mass * dt
        } else if transmitted < -rolling {
            (transmitted + rolling) / mass * dt
        } else {
            0.0
        };
        v_new = v_new.clamp(-p.max_speed, p.max_speed);

        let mean_v = 0.5 * (v + v_new);
        let advance = mean_v * dt * if slip { p.slip_advance_factor } else { 1.0 };

        // Articulated-frame heading kinematics.
        let gamma = next.articulation;
        let gamma_dot = (next.articulation - state.articulation) / dt;
        let denom = p.front_length * gamma.cos() + p.rear_length;
        let heading_rate = (mean_v * gamma.sin() + p.rear_length * gamma_dot) / denom;
        next.heading = state.heading + heading_rate * dt;
        let (fx, fy) = next.forward();
        next.x = state.x + advance * fx;
        next.y = state.y + advance * fy;
        next.forward_speed = v_new;

        let wheel_speed = if slip { v_new.abs().max(p.slip_speed) } else { mean_v.abs() };
        let loads = ActuatorLoads {
            tilt: (tilt_force, tilt_v),
            lift: (lift_force, lift_v),
            steer: (steer_force, steer_v),
            engine: (if slip { drive } else { transmitted }, wheel_speed),
        };
        let work = actuator_work(&loads, dt);

        let mut flags = StepFlags {
            wall_contact: false,
            wheel_slip: slip,
            blocked: false,
        };
        if self.touches_wall(&next) {
            flags.wall_contact = true;
            self.revert_pose(&mut next, state);
        } else if self.front_wheels_blocked(&next, terrain) && !self.front_wheels_blocked(state, terrain) {
            flags.blocked = true;
            self.revert_pose(&mut next, state);
        } else if next.bucket_tip(p).1 > self.drift.face_y {
            flags.blocked = true;
            self.revert_pose(&mut next, state);
        }
        next.wall_contact = flags.wall_contact;
        next.wheel_slip = flags.wheel_slip;

        Ok(StepResult {
            state: next,
            work,
            flags,
            required_drawbar,
            traction_limit,
        })
    }

    fn revert_pose(&self, next: &mut VehicleState, prev: &VehicleState) {
        next.x = prev.x;
        next.y = prev.y;
        next.heading = prev.heading;
        next.articulation = prev.articulation;
        next.steer_rate = 0.0;
        next.forward_speed = 0.0;
    }

    /// Corners of the bucket, front frame and rear frame outlines.
    pub fn footprint(&self, s: &VehicleState) -> Vec<(f64, f64)> {
        let p = &self.params;
        let mut pts = Vec::with_capacity(12);
        let (fx, fy) = s.forward();
        let (lx, ly) = (fy, -fx); // unit vector to the right of the front frame
        let front = |along: f64, side: f64| (s.x + along * fx + side * lx, s.y + along * fy + side * ly);
        let tip = p.bucket_reach + p.curl_reach * s.tilt;
        let hb = 0.5 * p.bucket_width;
        let hw = 0.5 * p.body_width;
        pts.push(front(tip, -hb));
        pts.push(front(tip, hb));
        pts.push(front(tip - p.bucket_depth, -hb));
        pts.push(front(tip - p.bucket_depth, hb));
        pts.push(front(-p.front_length, -hw));
        pts.push(front(-p.front_length, hw));
        // Rear frame hangs off the hinge at heading - articulation.
        let (hx, hy) = (s.x - p.front_length * fx, s.y - p.front_length * fy);
        let rh = s.heading - s.articulation;
        let (rx, ry) = (rh.sin(), rh.cos());
        let (rlx, rly) = (ry, -rx);
        let back = p.rear_length + p.rear_overhang;
        pts.push((hx + hw * rlx, hy + hw * rly));
        pts.push((hx - hw * rlx, hy - hw * rly));
        pts.push((hx - back * rx + hw * rlx, hy - back * ry + hw * rly));
        pts.push((hx - back * rx - hw * rlx, hy - back * ry - hw * rly));
        pts
    }

    pub fn touches_wall(&self, s: &VehicleState) -> bool {
        let half = self.drift.half_width();
        self.footprint(s).iter().any(|(x, _)| x.abs() >= half)
    }

    fn front_wheels_blocked(&self, s: &VehicleState, terrain: &Heightfield) -> bool {
        let (fx, fy) = s.forward();
        let (lx, ly) = (fy, -fx);
        let hw = 0.5 * self.params.body_width;
        [-hw, 0.0, hw]
            .iter()
            .any(|&o| terrain.height_at(s.x + o * lx, s.y + o * ly) > self.params.climb_limit)
    }

    /// Cut geometry of the bucket edge against the pile.
    ///
    /// The edge is sampled across its width against the interpolated pile
    /// surface. Depth is the mean penetration of the engaged samples, width
    /// the engaged share of the bucket width.
    pub fn bucket_engagement(&self, s: &VehicleState, hf: &Heightfield) -> CutState {
        const SAMPLES: usize = 8;
        let p = &self.params;
        let (tx, ty) = s.bucket_tip(p);
        let (fx, fy) = s.forward();
        let (lx, ly) = (fy, -fx);
        let z = s.edge_height(p);
        let mut depth_sum = 0.0;
        let mut engaged = 0usize;
        for k in 0..SAMPLES {
            let side = ((k as f64 + 0.5) / SAMPLES as f64 - 0.5) * p.bucket_width;
            let surface = hf.surface_at(tx + side * lx, ty + side * ly);
            if surface > z {
                depth_sum += surface - z;
                engaged += 1;
            }
        }
        if engaged == 0 {
            return CutState {
                depth: 0.0,
                width: 0.0,
                advance_speed: s.forward_speed.max(0.0),
            };
        }
        CutState {
            depth: depth_sum / engaged as f64,
            width: p.bucket_width * engaged as f64 / SAMPLES as f64,
            advance_speed: s.forward_speed.max(0.0),
        }
    }

    /// Footprint swept by the edge between two states, cut at the new edge
    /// height. `None` when the edge did not advance.
    pub fn swept_region(&self, prev: &VehicleState, next: &VehicleState) -> Option<SweptRegion> {
        let p = &self.params;
        let (_, y0) = prev.bucket_tip(p);
        let (x1, y1) = next.bucket_tip(p);
        if y1 <= y0 {
            return None;
        }
        let half = 0.5 * p.bucket_width * next.heading.cos().abs();
        Some(SweptRegion {
            x_min: x1 - half,
            x_max: x1 + half,
            y_min: y0,
            y_max: y1,
            cut_height: next.edge_height(p),
        })
    }
}

/// Drives one normalized actuator. Returns the edge velocity (m/s) and the
/// realized normalized rate (1/s). The commanded rate is capped by the rate
/// limit, stalls when the required force exceeds the actuator maximum, is
/// limited by the power share, and stops at the end of travel.
#[allow(clippy::too_many_arguments)]
fn actuate(
    a: &ActuatorParams,
    command: f64,
    force: f64,
    power: f64,
    position: f64,
    lo: f64,
    hi: f64,
    dt: f64,
) -> (f64, f64) {
    if command == 0.0 {
        return (0.0, 0.0);
    }
    if command > 0.0 && force > a.max_force {
        return (0.0, 0.0);
    }
    let mut speed = command.abs() * a.max_speed;
    if force > 0.0 {
        speed = speed.min(power / force);
    }
    let mut rate = command.signum() * speed / a.stroke;
    let target = (position + rate * dt).clamp(lo, hi);
    rate = (target - position) / dt;
    (rate * a.stroke, rate)
}

/// Adds excavated volume to the bucket, discarding overflow. Returns the
/// updated state and the spilled volume.
pub fn fill_bucket(state: &VehicleState, params: &VehicleParams, removed_volume: f64) -> (VehicleState, f64) {
    let mut next = *state;
    let added = removed_volume.max(0.0);
    let total = state.fill_volume + added;
    let cap = params.bucket_capacity_volume;
    next.fill_volume = total.min(cap);
    next.fill_fraction = (next.fill_volume / cap).clamp(0.0, 1.0);
    (next, (total - cap).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> VehicleModel {
        VehicleModel::new(VehicleParams::default(), DriftGeometry::default())
    }

    fn flat() -> Heightfield {
        Heightfield::standard_flat()
    }

    #[test]
    fn capacity_volume_matches_mass_at_upper_density() {
        let p = VehicleParams::default();
        assert!((p.bucket_capacity_volume - 17_500.0 / 2900.0).abs() < 1e-12);
        assert!((p.bucket_capacity_volume - 6.03).abs() < 0.01);
    }

    #[test]
    fn idle_step_changes_nothing() {
        let m = model();
        let s = VehicleState::parked(0.0, 3.0);
        let r = m.step(&s, &ActuatorCommand::default(), 0.0, 2700.0, &flat(), 0.02).unwrap();
        assert_eq!(r.work, WorkBreakdown::default());
        assert_eq!(r.state.x, s.x);
        assert_eq!(r.state.y, s.y);
        assert_eq!(r.state.forward_speed, 0.0);
        assert_eq!(r.state.lift, s.lift);
        assert!(!r.flags.wheel_slip && !r.flags.wall_contact);
    }

    #[test]
    fn full_throttle_reaches_entry_speed() {
        let m = model();
        let mut s = VehicleState::parked(0.0, -5.0);
        let hf = Heightfield::flat(28, 400, 0.32);
        let cmd = ActuatorCommand::new(1.0, 0.0, 0.0, 0.0);
        for _ in 0..400 {
            s = m.step(&s, &cmd, 0.0, 2700.0, &hf, 0.02).unwrap().state;
        }
        assert!((s.forward_speed - 1.6).abs() < 0.05, "{}", s.forward_speed);
    }

    #[test]
    fn resistance_beyond_traction_slips() {
        let m = model();
        let s = VehicleState::parked(0.0, 3.0);
        let limit = m.params.traction_coefficient * m.front_normal_load(0.0, 0.0);
        let cmd = ActuatorCommand::new(1.0, 0.0, 0.0, 0.0);
        let r = m.step(&s, &cmd, limit * 1.5, 2700.0, &flat(), 0.02).unwrap();
        assert!(r.flags.wheel_slip);
        let r = m.step(&s, &cmd, limit * 0.5, 2700.0, &flat(), 0.02).unwrap();
        assert!(!r.flags.wheel_slip);
    }

    #[test]
    fn actuator_work_reference() {
        let loads = ActuatorLoads {
            lift: (10_000.0, 0.1),
            ..Default::default()
        };
        let w = actuator_work(&loads, 0.0625);
        assert!((w.p_lift - 62.5).abs() < 1e-12);
        assert_eq!(w.p_tilt + w.p_steer + w.p_engine, 0.0);
        assert_eq!(actuator_work(&ActuatorLoads::default(), 0.1), WorkBreakdown::default());
    }

    #[test]
    fn rates_saturate_at_limit_and_clamp_extension() {
        let m = model();
        let mut s = VehicleState::parked(0.0, 3.0);
        let cmd = ActuatorCommand::new(0.0, 0.0, 5.0, 5.0);
        let r = m.step(&s, &cmd, 0.0, 2700.0, &flat(), 0.02).unwrap();
        assert!((r.state.lift_rate - m.params.lift.rate_limit()).abs() < 1e-12);
        assert!((r.state.tilt_rate - m.params.tilt.rate_limit()).abs() < 1e-12);
        for _ in 0..1000 {
            s = m.step(&s, &cmd, 0.0, 2700.0, &flat(), 0.02).unwrap().state;
        }
        assert_eq!(s.lift, 1.0);
        assert_eq!(s.tilt, 1.0);
        assert_eq!(s.tilt_rate, 0.0);
    }

    #[test]
    fn wall_contact_blocks_motion() {
        let m = model();
        let mut s = VehicleState::parked(2.9, 3.0);
        s.heading = 0.6;
        s.forward_speed = 1.0;
        let r = m.step(&s, &ActuatorCommand::new(1.0, 0.0, 0.0, 0.0), 0.0, 2700.0, &flat(), 0.02).unwrap();
        assert!(r.flags.wall_contact);
        assert_eq!(r.state.x, s.x);
        assert_eq!(r.state.forward_speed, 0.0);
    }

    #[test]
    fn engagement_far_and_inside_pile() {
        let m = model();
        let mut hf = flat();
        for j in 30..hf.ny {
            for i in 0..hf.nx {
                hf.set(i, j, 1.0);
            }
        }
        let far = VehicleState::parked(0.0, 2.0);
        assert_eq!(m.bucket_engagement(&far, &hf).depth, 0.0);
        // Edge just at the pile front, flat on the floor.
        let y = 30.0 * 0.32 - m.params.bucket_reach - 0.05;
        let s = VehicleState::parked(0.0, y);
        let cut = m.bucket_engagement(&s, &hf);
        assert!(cut.depth > 0.0);
        assert!((cut.width - 3.5).abs() < 1e-12);
        let mut raised = s;
        raised.lift = 0.5;
        assert_eq!(m.bucket_engagement(&raised, &hf).depth, 0.0);
    }

    #[test]
    fn fill_bucket_clamps() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        let (half, spill) = fill_bucket(&s, &p, p.bucket_capacity_volume / 2.0);
        assert!((half.fill_fraction - 0.5).abs() < 1e-12);
        assert_eq!(spill, 0.0);
        let (same, _) = fill_bucket(&half, &p, 0.0);
        assert_eq!(same.fill_fraction, half.fill_fraction);
        let (full, _) = fill_bucket(&s, &p, p.bucket_capacity_volume);
        let (still, spill) = fill_bucket(&full, &p, 1.0);
        assert_eq!(still.fill_fraction, 1.0);
        assert!((spill - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coasting_loses_kinetic_energy() {
        let m = model();
        let mut s = VehicleState::parked(0.0, 1.0);
        s.forward_speed = 1.2;
        let mut last = s.forward_speed;
        for _ in 0..200 {
            s = m.step(&s, &ActuatorCommand::default(), 0.0, 2700.0, &Heightfield::flat(28, 100, 0.32), 0.02).unwrap().state;
            assert!(s.forward_speed.abs() <= last.abs());
            last = s.forward_speed;
        }
    }

    #[test]
    fn non_finite_command_rejected() {
        let m = model();
        let s = VehicleState::parked(0.0, 1.0);
        let cmd = ActuatorCommand::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(m.step(&s, &cmd, 0.0, 2700.0, &flat(), 0.02).is_err());
    }
}

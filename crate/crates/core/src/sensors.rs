//! Depth cameras, the five-ray lidar and scalar observation assembly.
//!
//! The pile is treated as a set of flat-topped columns, one per heightfield
//! cell, and rays are traversed through the grid cell by cell. Depth is the
//! Euclidean range along the ray.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{DriftGeometry, Vec3};
use crate::soil::Heightfield;
use crate::vehicle::{VehicleModel, VehicleState};

pub const MAX_RANGE: f64 = 20.0;
pub const IMAGE_WIDTH: usize = 84;
pub const IMAGE_HEIGHT: usize = 44;
pub const LIDAR_AZIMUTHS_DEG: [f64; 5] = [-60.0, -30.0, 0.0, 30.0, 60.0];
pub const SCALAR_OBS_LEN: usize = 16;
pub const STACK_DEPTH: usize = 4;
pub const STACKED_LEN: usize = SCALAR_OBS_LEN * STACK_DEPTH;
const MIN_RANGE: f64 = 1e-3;

/// Distance along a unit ray to the first drift or pile surface, clamped to
/// `(0, max_range]`.
pub fn cast_ray(drift: &DriftGeometry, hf: &Heightfield, origin: Vec3, dir: Vec3, max_range: f64) -> f64 {
    let limit = drift.exit_distance(origin, dir).unwrap_or(f64::INFINITY).min(max_range);
    let t = column_hit(hf, origin, dir, limit).unwrap_or(limit);
    t.clamp(MIN_RANGE, max_range)
}

/// First intersection with the pile columns before `limit`.
pub fn column_hit(hf: &Heightfield, o: Vec3, d: Vec3, limit: f64) -> Option<f64> {
    let cs = hf.cell_size;
    let x0 = hf.x_origin();
    let x1 = x0 + hf.nx as f64 * cs;
    let y1 = hf.length();

    // Vertical ray: only the column underneath matters.
    if d.x.abs() < 1e-12 && d.y.abs() < 1e-12 {
        let h = hf.height_at(o.x, o.y);
        if o.z <= h {
            return Some(0.0);
        }
        if d.z < 0.0 {
            let t = (h - o.z) / d.z;
            return (t <= limit).then_some(t);
        }
        return None;
    }

    // Clip the planar ray to the grid rectangle.
    let mut t_enter: f64 = 0.0;
    let mut t_exit = limit;
    for (oc, dc, lo, hi) in [(o.x, d.x, x0, x1), (o.y, d.y, 0.0, y1)] {
        if dc.abs() < 1e-12 {
            if oc < lo || oc > hi {
                return None;
            }
        } else {
            let ta = (lo - oc) / dc;
            let tb = (hi - oc) / dc;
            t_enter = t_enter.max(ta.min(tb));
            t_exit = t_exit.min(ta.max(tb));
        }
    }
    if t_enter > t_exit {
        return None;
    }

    let px = o.x + t_enter * d.x;
    let py = o.y + t_enter * d.y;
    let mut i = (((px - x0) / cs).floor() as isize).clamp(0, hf.nx as isize - 1);
    let mut j = ((py / cs).floor() as isize).clamp(0, hf.ny as isize - 1);
    let step_i: isize = if d.x > 0.0 { 1 } else { -1 };
    let step_j: isize = if d.y > 0.0 { 1 } else { -1 };
    let next_boundary = |idx: isize, step: isize, origin: f64, base: f64| {
        let edge = base + (idx + if step > 0 { 1 } else { 0 }) as f64 * cs;
        edge - origin
    };
    let mut t_max_x = if d.x.abs() < 1e-12 {
        f64::INFINITY
    } else {
        next_boundary(i, step_i, o.x, x0) / d.x
    };
    let mut t_max_y = if d.y.abs() < 1e-12 {
        f64::INFINITY
    } else {
        next_boundary(j, step_j, o.y, 0.0) / d.y
    };
    let t_dx = if d.x.abs() < 1e-12 { f64::INFINITY } else { cs / d.x.abs() };
    let t_dy = if d.y.abs() < 1e-12 { f64::INFINITY } else { cs / d.y.abs() };

    let mut t = t_enter;
    loop {
        let t_out = t_max_x.min(t_max_y).min(t_exit);
        let h = hf.get(i as usize, j as usize);
        if h > 0.0 {
            let z_in = o.z + t * d.z;
            if z_in <= h {
                return Some(t);
            }
            if d.z < 0.0 && o.z + t_out * d.z <= h {
                return Some((h - o.z) / d.z);
            }
        }
        if t_out >= t_exit {
            return None;
        }
        if t_max_x < t_max_y {
            i += step_i;
            t = t_max_x;
            t_max_x += t_dx;
        } else {
            j += step_j;
            t = t_max_y;
            t_max_y += t_dy;
        }
        if i < 0 || j < 0 || i >= hf.nx as isize || j >= hf.ny as isize {
            return None;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    /// rad, from `+y` towards `+x`
    pub yaw: f64,
    /// rad, positive looks up
    pub pitch: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_range: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            hfov_deg: 90.0,
            vfov_deg: 50.0,
            max_range: MAX_RANGE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

impl Camera {
    /// Fixed tunnel camera looking at the pile from the drift centerline.
    pub fn tunnel(initial_toe_y: f64) -> Self {
        Self {
            pose: CameraPose {
                position: Vec3::new(0.0, initial_toe_y - 10.0, 3.5),
                yaw: 0.0,
                pitch: (-10.0f64).to_radians(),
            },
            intrinsics: CameraIntrinsics::default(),
        }
    }

    /// Cab-roof camera on the front frame, looking over the bucket.
    pub fn vehicle_mounted(state: &VehicleState) -> Self {
        let (fx, fy) = state.forward();
        Self {
            pose: CameraPose {
                position: Vec3::new(state.x - 0.5 * fx, state.y - 0.5 * fy, 2.8),
                yaw: state.heading,
                pitch: (-25.0f64).to_radians(),
            },
            intrinsics: CameraIntrinsics::default(),
        }
    }

    /// Unit ray through the centre of pixel `(u, v)`, row 0 at the top.
    pub fn ray(&self, u: usize, v: usize) -> Vec3 {
        let p = &self.pose;
        let k = &self.intrinsics;
        let (sy, cy) = p.yaw.sin_cos();
        let (sp, cp) = p.pitch.sin_cos();
        let forward = Vec3::new(sy * cp, cy * cp, sp);
        let right = Vec3::new(cy, -sy, 0.0);
        let up = right.cross(forward);
        let sx = (2.0 * (u as f64 + 0.5) / k.width as f64 - 1.0) * (0.5 * k.hfov_deg.to_radians()).tan();
        let sv = (1.0 - 2.0 * (v as f64 + 0.5) / k.height as f64) * (0.5 * k.vfov_deg.to_radians()).tan();
        forward.add(right.scale(sx)).add(up.scale(sv)).normalized()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major ranges in metres.
    pub depths: Vec<f32>,
}

impl DepthImage {
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.depths[v * self.width + u]
    }

    /// Depths scaled to `[-1, 1]` over `[0, max_range]`.
    pub fn normalized(&self, max_range: f64) -> Vec<f32> {
        let s = (2.0 / max_range) as f32;
        self.depths.iter().map(|d| d * s - 1.0).collect()
    }

    /// Binary 16-bit PGM with depths in millimetres.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.depths.len() * 2);
        for d in &self.depths {
            let mm = (f64::from(*d) * 1000.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&mm.to_be_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))
    }
}

pub fn render_depth(camera: &Camera, drift: &DriftGeometry, hf: &Heightfield) -> DepthImage {
    let k = &camera.intrinsics;
    let mut depths = Vec::with_capacity(k.width * k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let dir = camera.ray(u, v);
            depths.push(cast_ray(drift, hf, camera.pose.position, dir, k.max_range) as f32);
        }
    }
    DepthImage {
        width: k.width,
        height: k.height,
        depths,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub distances: [f64; 5],
}

/// Horizontal lidar fan from `origin`, azimuths relative to `heading`.
pub fn lidar_scan_from(origin: Vec3, heading: f64, drift: &DriftGeometry, hf: &Heightfield) -> LidarScan {
    let mut distances = [0.0; 5];
    for (d, az) in distances.iter_mut().zip(LIDAR_AZIMUTHS_DEG) {
        let a = heading + az.to_radians();
        let dir = Vec3::new(a.sin(), a.cos(), 0.0);
        *d = cast_ray(drift, hf, origin, dir, MAX_RANGE);
    }
    LidarScan { distances }
}

/// Lidar mounted on the front frame, 1 m ahead of the front axle and 1 m
/// above the floor.
pub fn lidar_origin(state: &VehicleState) -> Vec3 {
    let (fx, fy) = state.forward();
    Vec3::new(state.x + fx, state.y + fy, 1.0)
}

pub fn lidar_scan(state: &VehicleState, drift: &DriftGeometry, hf: &Heightfield) -> LidarScan {
    lidar_scan_from(lidar_origin(state), state.heading, drift, hf)
}

/// Sixteen normalized channels:
///
/// | idx | channel | normalization |
/// |-----|---------|---------------|
/// | 0–2 | steer position, rate, force | articulation / max, rate / rate limit, force / max force |
/// | 3–5 | lift position, rate, force | 2·lift − 1, rate / rate limit, force / max force |
/// | 6–8 | tilt position, rate, force | 2·tilt − 1, rate / rate limit, force / max force |
/// | 9 | centre-shaft speed | speed / max speed |
/// | 10 | bucket tip − target, lateral | metres / half drift width |
/// | 11–15 | lidar ranges | 2·range / max range − 1 |
///
/// Every channel is clamped to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarObs(pub [f32; SCALAR_OBS_LEN]);

pub fn scalar_obs(
    model: &VehicleModel,
    state: &VehicleState,
    target_x: f64,
    lidar: &LidarScan,
) -> ScalarObs {
    let p = &model.params;
    let half = model.drift.half_width();
    let (tip_x, _) = state.bucket_tip(p);
    let raw = [
        state.articulation / p.max_articulation,
        state.steer_rate / p.steer.rate_limit(),
        state.steer_force / p.steer.max_force,
        2.0 * state.lift - 1.0,
        state.lift_rate / p.lift.rate_limit(),
        state.lift_force / p.lift.max_force,
        2.0 * state.tilt - 1.0,
        state.tilt_rate / p.tilt.rate_limit(),
        state.tilt_force / p.tilt.max_force,
        state.forward_speed / p.max_speed,
        (tip_x - target_x) / half,
        2.0 * lidar.distances[0] / MAX_RANGE - 1.0,
        2.0 * lidar.distances[1] / MAX_RANGE - 1.0,
        2.0 * lidar.distances[2] / MAX_RANGE - 1.0,
        2.0 * lidar.distances[3] / MAX_RANGE - 1.0,
        2.0 * lidar.distances[4] / MAX_RANGE - 1.0,
    ];
    let mut out = [0f32; SCALAR_OBS_LEN];
    for (o, r) in out.iter_mut().zip(raw) {
        *o = r.clamp(-1.0, 1.0) as f32;
    }
    ScalarObs(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedObservation {
    pub depth: Option<DepthImage>,
    /// Four scalar frames, oldest first.
    pub scalars: Vec<f32>,
}

/// Sliding window of the last four scalar observations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    frames: VecDeque<ScalarObs>,
}

impl ObservationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends a frame; an empty history is padded with copies of it.
    pub fn push(&mut self, obs: ScalarObs) {
        if self.frames.is_empty() {
            self.frames.extend(std::iter::repeat_n(obs, STACK_DEPTH));
        } else {
            self.frames.push_back(obs);
            while self.frames.len() > STACK_DEPTH {
                self.frames.pop_front();
            }
        }
    }

    pub fn stacked(&self) -> Vec<f32> {
        self.frames.iter().flat_map(|f| f.0).collect()
    }
}

/// Appends the current frame and returns the stacked observation.
pub fn assemble_ma_obs(
    history: &mut ObservationHistory,
    current: ScalarObs,
    depth: Option<DepthImage>,
) -> StackedObservation {
    history.push(current);
    StackedObservation {
        depth,
        scalars: history.stacked(),
    }
}

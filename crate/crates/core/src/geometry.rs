//! Drift (tunnel) geometry and small vector helpers.
//!
//! World frame: `x` lateral (0 on the drift centerline, walls at `±width/2`),
//! `y` longitudinal (increasing towards the muck pile and the drift face),
//! `z` up from the floor.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn at(self, dir: Vec3, t: f64) -> Vec3 {
        self.add(dir.scale(t))
    }
}

/// Cross-section of the drift: vertical side walls up to `wall_height`,
/// then an elliptical arch reaching `height` at the centerline. The drift
/// is open towards `-y` and closed by the rock face at `y = face_y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftGeometry {
    pub width: f64,
    pub height: f64,
    pub wall_height: f64,
    pub face_y: f64,
}

impl Default for DriftGeometry {
    fn default() -> Self {
        Self {
            width: 9.0,
            height: 4.5,
            wall_height: 3.0,
            face_y: 19.2,
        }
    }
}

impl DriftGeometry {
    pub fn half_width(&self) -> f64 {
        0.5 * self.width
    }

    fn arch_rise(&self) -> f64 {
        self.height - self.wall_height
    }

    /// Point-in-drift test, ignoring the muck pile.
    pub fn contains(&self, p: Vec3) -> bool {
        let a = self.half_width();
        if p.z < 0.0 || p.x.abs() > a || p.y > self.face_y {
            return false;
        }
        if p.z <= self.wall_height {
            return true;
        }
        let ex = p.x / a;
        let ez = (p.z - self.wall_height) / self.arch_rise();
        ex * ex + ez * ez <= 1.0
    }

    /// Distance along a unit ray from an interior origin to the drift
    /// boundary (floor, walls, arch or face). `None` only for rays leaving
    /// through the open end at `-y`.
    pub fn exit_distance(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let a = self.half_width();
        let b = self.arch_rise();
        let wh = self.wall_height;
        let mut best = f64::INFINITY;

        if dir.z < 0.0 {
            best = best.min(-origin.z / dir.z);
        }
        if dir.y > 0.0 {
            best = best.min((self.face_y - origin.y) / dir.y);
        }
        if dir.x != 0.0 {
            let wall = if dir.x > 0.0 { a } else { -a };
            let t = (wall - origin.x) / dir.x;
            if origin.z + t * dir.z <= wh {
                best = best.min(t);
            }
        }
        // Arch: ellipse centred at (0, wall_height) in the x-z plane.
        let px = origin.x / a;
        let pz = (origin.z - wh) / b;
        let dx = dir.x / a;
        let dz = dir.z / b;
        let qa = dx * dx + dz * dz;
        if qa > 0.0 {
            let qb = 2.0 * (px * dx + pz * dz);
            let qc = px * px + pz * pz - 1.0;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let t = (-qb + disc.sqrt()) / (2.0 * qa);
                if t > 0.0 && origin.z + t * dir.z >= wh {
                    best = best.min(t);
                }
            }
        }
        if best.is_finite() {
            Some(best.max(0.0))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_ahead_hits_face() {
        let d = DriftGeometry::default();
        let t = d
            .exit_distance(Vec3::new(0.0, 10.0, 1.0), Vec3::new(0.0, 1.0, 0.0))
            .unwrap();
        assert!((t - 9.2).abs() < 1e-12);
    }

    #[test]
    fn straight_up_hits_arch_apex() {
        let d = DriftGeometry::default();
        let t = d
            .exit_distance(Vec3::new(0.0, 5.0, 1.0), Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((t - 3.5).abs() < 1e-12);
    }

    #[test]
    fn sideways_hits_wall() {
        let d = DriftGeometry::default();
        let t = d
            .exit_distance(Vec3::new(1.0, 5.0, 1.0), Vec3::new(-1.0, 0.0, 0.0))
            .unwrap();
        assert!((t - 5.5).abs() < 1e-12);
    }

    #[test]
    fn backwards_escapes() {
        let d = DriftGeometry::default();
        assert!(d
            .exit_distance(Vec3::new(0.0, 5.0, 1.0), Vec3::new(0.0, -1.0, 0.0))
            .is_none());
    }

    #[test]
    fn arch_is_inside_below_and_outside_above() {
        let d = DriftGeometry::default();
        assert!(d.contains(Vec3::new(0.0, 1.0, 4.49)));
        assert!(!d.contains(Vec3::new(4.0, 1.0, 4.0)));
    }
}

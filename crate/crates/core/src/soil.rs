//! Muck pile: heightfield terrain, soil parameters, dig resistance,
//! excavation and the pool of saved pile shapes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::DriftGeometry;

pub const GRAVITY: f64 = 9.81;
pub const CELL_SIZE: f64 = 0.32;
pub const GRID_NX: usize = 28;
pub const GRID_NY: usize = 60;
/// Cells at or below this height count as bare floor when tracing the pile edge.
pub const EDGE_EPSILON: f64 = 0.05;

pub const NOMINAL_DENSITY: f64 = 2700.0;
pub const DENSITY_PERTURBATION: f64 = 200.0;
pub const MAX_DENSITY: f64 = NOMINAL_DENSITY + DENSITY_PERTURBATION;
pub const FRICTION_ANGLE_DEG: f64 = 50.0;
pub const COHESION: f64 = 6000.0;
pub const PENETRATION_SCALING_RANGE: (f64, f64) = (5.0, 8.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoilParams {
    /// kg/m³
    pub density: f64,
    /// degrees
    pub friction_angle: f64,
    /// Pa
    pub cohesion: f64,
    pub penetration_scaling: f64,
}

impl Default for SoilParams {
    fn default() -> Self {
        Self {
            density: NOMINAL_DENSITY,
            friction_angle: FRICTION_ANGLE_DEG,
            cohesion: COHESION,
            penetration_scaling: 0.5 * (PENETRATION_SCALING_RANGE.0 + PENETRATION_SCALING_RANGE.1),
        }
    }
}

impl SoilParams {
    /// Default material at the upper density limit, used for evaluation so a
    /// full bucket weighs about 17.5 t.
    pub fn evaluation() -> Self {
        Self {
            density: MAX_DENSITY,
            ..Self::default()
        }
    }

    /// Rankine passive earth pressure coefficient, tan²(45° + φ/2).
    pub fn passive_pressure_coefficient(&self) -> f64 {
        let half = (45.0 + 0.5 * self.friction_angle).to_radians();
        half.tan().powi(2)
    }
}

/// Per-pile material randomization.
pub fn sample_soil<R: Rng + ?Sized>(rng: &mut R) -> SoilParams {
    let u = rng.random_range(-DENSITY_PERTURBATION..=DENSITY_PERTURBATION);
    let (lo, hi) = PENETRATION_SCALING_RANGE;
    SoilParams {
        density: NOMINAL_DENSITY + u,
        friction_angle: FRICTION_ANGLE_DEG,
        cohesion: COHESION,
        penetration_scaling: rng.random_range(lo..=hi),
    }
}

/// Regular grid of soil surface heights above the drift floor.
///
/// `heights` is row-major with one row per longitudinal index `j`
/// (`heights[j * nx + i]`). Cell `(i, j)` spans
/// `x ∈ [x0 + i·cs, x0 + (i+1)·cs]`, `y ∈ [j·cs, (j+1)·cs]` with
/// `x0 = -nx·cs/2`, so the grid is centred on the drift axis and starts at
/// the drift entrance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn flat(nx: usize, ny: usize, cell_size: f64) -> Self {
        Self {
            nx,
            ny,
            cell_size,
            heights: vec![0.0; nx * ny],
        }
    }

    pub fn standard_flat() -> Self {
        Self::flat(GRID_NX, GRID_NY, CELL_SIZE)
    }

    pub fn x_origin(&self) -> f64 {
        -0.5 * self.nx as f64 * self.cell_size
    }

    pub fn length(&self) -> f64 {
        self.ny as f64 * self.cell_size
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.heights[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, h: f64) {
        let k = self.index(i, j);
        self.heights[k] = h.max(0.0);
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_origin() + (i as f64 + 0.5) * self.cell_size,
            (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing the planar point, if it lies on the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x_origin()) / self.cell_size).floor();
        let fj = (y / self.cell_size).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            None
        } else {
            Some((fi as usize, fj as usize))
        }
    }

    /// Surface height at a planar point; bare floor off the grid.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.cell_at(x, y).map_or(0.0, |(i, j)| self.get(i, j))
    }

    /// Bilinear interpolation between cell centres. Bare floor in front of
    /// the grid; clamped laterally and at the far end.
    pub fn surface_at(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.x_origin()) / self.cell_size - 0.5;
        let v = y / self.cell_size - 0.5;
        if v < -1.0 {
            return 0.0;
        }
        let (i0, j0) = (u.floor(), v.floor());
        let (fu, fv) = (u - i0, v - j0);
        let sample = |i: f64, j: f64| -> f64 {
            if j < 0.0 {
                return 0.0;
            }
            let ii = (i.max(0.0) as usize).min(self.nx - 1);
            let jj = (j as usize).min(self.ny - 1);
            self.get(ii, jj)
        };
        let h00 = sample(i0, j0);
        let h10 = sample(i0 + 1.0, j0);
        let h01 = sample(i0, j0 + 1.0);
        let h11 = sample(i0 + 1.0, j0 + 1.0);
        (h00 * (1.0 - fu) + h10 * fu) * (1.0 - fv) + (h01 * (1.0 - fu) + h11 * fu) * fv
    }

    pub fn volume(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.cell_size * self.cell_size
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    /// Lateral mirror image (x → -x).
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.set(self.nx - 1 - i, j, self.get(i, j));
            }
        }
        out
    }

    /// Smallest longitudinal coordinate of a cell centre in `[x_min, x_max]`
    /// whose height exceeds `threshold`.
    pub fn toe_y(&self, x_min: f64, x_max: f64, threshold: f64) -> Option<f64> {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (cx, cy) = self.cell_center(i, j);
                if cx >= x_min && cx <= x_max && self.get(i, j) > threshold {
                    return Some(cy);
                }
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PileShape {
    Convex,
    Concave,
    LeftSkewed,
    RightSkewed,
}

impl PileShape {
    pub const ALL: [PileShape; 4] = [
        PileShape::Convex,
        PileShape::Concave,
        PileShape::LeftSkewed,
        PileShape::RightSkewed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PileShape::Convex => "convex",
            PileShape::Concave => "concave",
            PileShape::LeftSkewed => "left_skewed",
            PileShape::RightSkewed => "right_skewed",
        }
    }

    /// Longitudinal toe offset as a function of normalized lateral position
    /// `s = x / half_width ∈ [-1, 1]`. Negative offsets bring the toe closer
    /// to the drift entrance.
    fn toe_offset(self, s: f64, amplitude: f64) -> f64 {
        match self {
            PileShape::Convex => -amplitude * (0.5 * PI * s).cos(),
            PileShape::Concave => amplitude * (0.5 * PI * s).cos(),
            PileShape::LeftSkewed => amplitude * s,
            PileShape::RightSkewed => -amplitude * s,
        }
    }
}

impl std::fmt::Display for PileShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PileSpec {
    pub shape: PileShape,
    /// m
    pub apex_height: f64,
    /// Longitudinal coordinate of the pile toe on the centerline (m).
    pub toe_position: f64,
    /// Face slope in degrees, at most the friction angle.
    pub slope_deg: f64,
    /// Longitudinal amplitude of the lateral toe modulation (m).
    pub lateral_amplitude: f64,
    /// Amplitude of the seeded surface roughness (m).
    pub roughness: f64,
}

impl PileSpec {
    pub fn new(shape: PileShape) -> Self {
        Self {
            shape,
            apex_height: 3.0,
            toe_position: 9.0,
            slope_deg: 40.0,
            lateral_amplitude: 1.5,
            roughness: 0.03,
        }
    }

    /// Low, gentle, laterally uniform pile used for learning checks.
    pub fn simplified() -> Self {
        Self {
            apex_height: 1.5,
            toe_position: 7.0,
            slope_deg: 25.0,
            lateral_amplitude: 0.0,
            ..Self::new(PileShape::Convex)
        }
    }

    /// The four initial piles of the generation pool.
    pub fn initial_set() -> [PileSpec; 4] {
        PileShape::ALL.map(PileSpec::new)
    }
}

/// Builds a pile on the standard grid. The surface rises from the toe at the
/// face slope until it reaches the apex height, which is then held up to
/// the drift face.
pub fn generate_pile<R: Rng + ?Sized>(
    spec: &PileSpec,
    drift: &DriftGeometry,
    rng: &mut R,
) -> Result<Heightfield> {
    generate_pile_on(Heightfield::standard_flat(), spec, drift, rng)
}

pub fn generate_pile_on<R: Rng + ?Sized>(
    mut hf: Heightfield,
    spec: &PileSpec,
    drift: &DriftGeometry,
    rng: &mut R,
) -> Result<Heightfield> {
    validate_spec(spec, drift, &hf)?;
    let slope = spec.slope_deg.to_radians().tan();
    let half = drift.half_width();
    for j in 0..hf.ny {
        for i in 0..hf.nx {
            let (x, y) = hf.cell_center(i, j);
            let s = (x / half).clamp(-1.0, 1.0);
            let toe = spec.toe_position + spec.shape.toe_offset(s, spec.lateral_amplitude);
            let mut h = (slope * (y - toe)).clamp(0.0, spec.apex_height);
            if h > 0.0 && spec.roughness > 0.0 {
                h += rng.random_range(-spec.roughness..=spec.roughness);
            }
            hf.set(i, j, h.min(drift.height));
        }
    }
    Ok(hf)
}

fn validate_spec(spec: &PileSpec, drift: &DriftGeometry, hf: &Heightfield) -> Result<()> {
    for (what, v) in [
        ("apex_height", spec.apex_height),
        ("toe_position", spec.toe_position),
        ("slope_deg", spec.slope_deg),
        ("lateral_amplitude", spec.lateral_amplitude),
        ("roughness", spec.roughness),
    ] {
        ensure_finite(what, v)?;
    }
    if spec.apex_height <= 0.0 || spec.apex_height > drift.height {
        return Err(Error::InvalidPile(format!(
            "apex height {} m outside (0, {}] m drift height",
            spec.apex_height, drift.height
        )));
    }
    let end = hf.length().min(drift.face_y);
    if spec.toe_position < 0.0 || spec.toe_position >= end {
        return Err(Error::InvalidPile(format!(
            "toe position {} m outside the drift floor [0, {end}) m",
            spec.toe_position
        )));
    }
    if spec.slope_deg <= 0.0 || spec.slope_deg > FRICTION_ANGLE_DEG {
        return Err(Error::InvalidPile(format!(
            "face slope {}° must lie in (0, {FRICTION_ANGLE_DEG}]° (angle of repose)",
            spec.slope_deg
        )));
    }
    if spec.lateral_amplitude < 0.0 || spec.roughness < 0.0 {
        return Err(Error::InvalidPile(
            "lateral amplitude and roughness must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Engagement of the bucket edge with the pile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutState {
    /// Depth of the cutting edge below the local pile surface (m).
    pub depth: f64,
    /// Engaged edge width (m).
    pub width: f64,
    /// Forward speed of the edge (m/s).
    pub advance_speed: f64,
}

/// Earthmoving-equation resistance against the cutting edge (N):
/// `s · (c·d·w + ½·ρ·g·d²·w·K_p)`.
pub fn dig_resistance(soil: &SoilParams, cut: &CutState) -> Result<f64> {
    ensure_finite("cut depth", cut.depth)?;
    ensure_finite("cut width", cut.width)?;
    ensure_finite("advance speed", cut.advance_speed)?;
    for (what, v) in [
        ("density", soil.density),
        ("friction angle", soil.friction_angle),
        ("cohesion", soil.cohesion),
        ("penetration scaling", soil.penetration_scaling),
    ] {
        ensure_finite(what, v)?;
    }
    if cut.width < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative engaged width {}",
            cut.width
        )));
    }
    if cut.depth <= 0.0 {
        return Ok(0.0);
    }
    let d = cut.depth;
    let w = cut.width;
    let cohesive = soil.cohesion * d * w;
    let overburden = 0.5 * soil.density * GRAVITY * d * d * w * soil.passive_pressure_coefficient();
    Ok(soil.penetration_scaling * (cohesive + overburden))
}

/// Axis-aligned bucket footprint and the height of the cutting plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweptRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cut_height: f64,
}

/// Lowers every cell whose centre lies in the footprint to the cut plane.
/// Returns the removed volume (m³).
pub fn excavate(hf: &mut Heightfield, region: &SweptRegion) -> f64 {
    let plane = region.cut_height.max(0.0);
    let area = hf.cell_size * hf.cell_size;
    let mut removed = 0.0;
    if region.x_max < region.x_min || region.y_max < region.y_min {
        return 0.0;
    }
    let cs = hf.cell_size;
    let x0 = hf.x_origin();
    // Index range of cells whose centres may fall inside the footprint.
    let i_lo = (((region.x_min - x0) / cs - 0.5).ceil().max(0.0)) as usize;
    let j_lo = ((region.y_min / cs - 0.5).ceil().max(0.0)) as usize;
    for j in j_lo..hf.ny {
        let (_, cy) = hf.cell_center(0, j);
        if cy > region.y_max {
            break;
        }
        if cy < region.y_min {
            continue;
        }
        for i in i_lo..hf.nx {
            let (cx, _) = hf.cell_center(i, j);
            if cx > region.x_max {
                break;
            }
            if cx < region.x_min {
                continue;
            }
            let k = hf.index(i, j);
            let h = hf.heights[k];
            if h > plane {
                removed += (h - plane) * area;
                hf.heights[k] = plane;
            }
        }
    }
    removed
}

/// Longitudinal spread of the pile edge (m): the distance between the
/// innermost and outermost edge cells. A cell is on the edge when it is
/// above [`EDGE_EPSILON`] and has a 4-neighbour at or below it.
pub fn pile_edge_metrics(hf: &Heightfield) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let bare = |i: usize, j: usize| hf.get(i, j) <= EDGE_EPSILON;
    for j in 0..hf.ny {
        for i in 0..hf.nx {
            if bare(i, j) {
                continue;
            }
            let edge = (i > 0 && bare(i - 1, j))
                || (i + 1 < hf.nx && bare(i + 1, j))
                || (j > 0 && bare(i, j - 1))
                || (j + 1 < hf.ny && bare(i, j + 1));
            if edge {
                let y = (j as f64 + 0.5) * hf.cell_size;
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Pile planarity score `exp(-d²/d0²)`.
pub fn planarity(edge_spread: f64, d0: f64) -> f64 {
    (-(edge_spread * edge_spread) / (d0 * d0)).exp()
}

/// Pile mass in tonnes.
pub fn pile_mass(hf: &Heightfield, soil: &SoilParams) -> f64 {
    hf.volume() * soil.density / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub heightfield: Heightfield,
    pub generation: u32,
}

/// Saved pile shapes, tagged by how many save cycles separate them from a
/// parametric initial pile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PilePool {
    pub entries: Vec<PoolEntry>,
}

impl PilePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pool holding the four parametric piles as generation 0.
    pub fn with_initial_piles<R: Rng + ?Sized>(drift: &DriftGeometry, rng: &mut R) -> Result<Self> {
        Self::from_specs(&PileSpec::initial_set(), drift, rng)
    }

    pub fn from_specs<R: Rng + ?Sized>(specs: &[PileSpec], drift: &DriftGeometry, rng: &mut R) -> Result<Self> {
        let mut pool = Self::new();
        for spec in specs {
            pool.entries.push(PoolEntry {
                heightfield: generate_pile(spec, drift, rng)?,
                generation: 0,
            });
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Saves a pile obtained by loading from a pile of `parent_generation`.
    pub fn push(&mut self, heightfield: Heightfield, parent_generation: u32) -> u32 {
        let generation = parent_generation + 1;
        self.entries.push(PoolEntry {
            heightfield,
            generation,
        });
        generation
    }

    /// Uniform draw among entries with `generation <= max_generation`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, max_generation: u32) -> Result<&PoolEntry> {
        let eligible: Vec<&PoolEntry> = self
            .entries
            .iter()
            .filter(|e| e.generation <= max_generation)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyPool { max_generation });
        }
        Ok(eligible[rng.random_range(0..eligible.len())])
    }
}

/// On-disk pile form: header fields plus the row-major height array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PileSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub generation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<PileShape>,
    pub heights: Vec<f64>,
}

impl PileSnapshot {
    pub fn new(hf: &Heightfield, generation: u32, shape: Option<PileShape>) -> Self {
        Self {
            nx: hf.nx,
            ny: hf.ny,
            cell_size: hf.cell_size,
            generation,
            shape,
            heights: hf.heights.clone(),
        }
    }

    pub fn into_heightfield(self) -> Result<Heightfield> {
        if self.heights.len() != self.nx * self.ny {
            return Err(Error::ShapeMismatch {
                context: "pile snapshot",
                expected: vec![self.ny, self.nx],
                actual: vec![self.heights.len()],
            });
        }
        if self.heights.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::InvalidPile("snapshot holds negative or non-finite heights".into()));
        }
        Ok(Heightfield {
            nx: self.nx,
            ny: self.ny,
            cell_size: self.cell_size,
            heights: self.heights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn soil_within_bounds_and_deterministic() {
        let mut r = rng(7);
        for _ in 0..1000 {
            let s = sample_soil(&mut r);
            assert!((2500.0..=2900.0).contains(&s.density));
            assert!((5.0..=8.0).contains(&s.penetration_scaling));
            assert_eq!(s.friction_angle, 50.0);
            assert_eq!(s.cohesion, 6000.0);
        }
        assert_eq!(sample_soil(&mut rng(42)), sample_soil(&mut rng(42)));
    }

    #[test]
    fn nominal_density_is_2700() {
        assert_eq!(SoilParams::default().density, 2700.0);
        assert_eq!(SoilParams::evaluation().density, 2900.0);
    }

    #[test]
    fn convex_profile_peaks_on_centerline() {
        let drift = DriftGeometry::default();
        let mut spec = PileSpec::new(PileShape::Convex);
        spec.roughness = 0.0;
        let hf = generate_pile(&spec, &drift, &mut rng(1)).unwrap();
        // A row crossing the sloped face.
        let j = (9.0 / CELL_SIZE) as usize;
        let row: Vec<f64> = (0..hf.nx).map(|i| hf.get(i, j)).collect();
        let max = row.iter().copied().fold(0.0, f64::max);
        let center = 0.5 * (row[hf.nx / 2 - 1] + row[hf.nx / 2]);
        assert!(max > 0.0);
        assert!((center - max).abs() < 1e-12);
        assert!(row[0] < center && row[hf.nx - 1] < center);
    }

    #[test]
    fn concave_profile_dips_on_centerline() {
        let drift = DriftGeometry::default();
        let mut spec = PileSpec::new(PileShape::Concave);
        spec.roughness = 0.0;
        let hf = generate_pile(&spec, &drift, &mut rng(1)).unwrap();
        let j = (9.5 / CELL_SIZE) as usize;
        assert!(hf.get(0, j) > hf.get(hf.nx / 2, j));
    }

    #[test]
    fn left_skewed_toe_is_nearer_on_the_left() {
        let drift = DriftGeometry::default();
        let hf = generate_pile(&PileSpec::new(PileShape::LeftSkewed), &drift, &mut rng(3)).unwrap();
        let left = hf.toe_y(-4.5, -0.5, EDGE_EPSILON).unwrap();
        let right = hf.toe_y(0.5, 4.5, EDGE_EPSILON).unwrap();
        assert!(left < right, "left toe {left} right toe {right}");
        let rs = generate_pile(&PileSpec::new(PileShape::RightSkewed), &drift, &mut rng(3)).unwrap();
        assert!(rs.toe_y(0.5, 4.5, EDGE_EPSILON).unwrap() < rs.toe_y(-4.5, -0.5, EDGE_EPSILON).unwrap());
    }

    #[test]
    fn initial_piles_hold_more_than_twenty_buckets() {
        let drift = DriftGeometry::default();
        let soil = SoilParams {
            density: 2500.0,
            ..SoilParams::default()
        };
        for spec in PileSpec::initial_set() {
            let hf = generate_pile(&spec, &drift, &mut rng(0)).unwrap();
            assert!(pile_mass(&hf, &soil) > 20.0 * 17.5, "{}", spec.shape);
        }
    }

    #[test]
    fn generate_pile_rejects_bad_specs() {
        let drift = DriftGeometry::default();
        let mut spec = PileSpec::new(PileShape::Convex);
        spec.apex_height = 5.0;
        assert!(matches!(generate_pile(&spec, &drift, &mut rng(0)), Err(Error::InvalidPile(_))));
        let mut spec = PileSpec::new(PileShape::Convex);
        spec.toe_position = 30.0;
        assert!(generate_pile(&spec, &drift, &mut rng(0)).is_err());
        let mut spec = PileSpec::new(PileShape::Convex);
        spec.slope_deg = 60.0;
        assert!(generate_pile(&spec, &drift, &mut rng(0)).is_err());
    }

    #[test]
    fn generate_pile_is_bit_identical_per_seed() {
        let drift = DriftGeometry::default();
        let spec = PileSpec::new(PileShape::RightSkewed);
        let a = generate_pile(&spec, &drift, &mut rng(11)).unwrap();
        let b = generate_pile(&spec, &drift, &mut rng(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dig_resistance_reference_value() {
        let soil = SoilParams {
            density: 2700.0,
            friction_angle: 50.0,
            cohesion: 6000.0,
            penetration_scaling: 6.5,
        };
        let cut = CutState {
            depth: 0.5,
            width: 3.5,
            advance_speed: 1.0,
        };
        // tan²(70°) = 7.548632170413..., hand evaluation of the formula:
        // 6.5·(6000·0.5·3.5 + 0.5·2700·9.81·0.25·3.5·7.5486321704) = 636 831.14...
        let kp = 70f64.to_radians().tan().powi(2);
        let expected = 6.5 * (10_500.0 + 0.5 * 2700.0 * 9.81 * 0.25 * 3.5 * kp);
        let f = dig_resistance(&soil, &cut).unwrap();
        assert!((f - expected).abs() < 1e-6);
        assert!((f - 636_831.14).abs() < 0.01, "{f}");
    }

    #[test]
    fn dig_resistance_edge_cases() {
        let soil = SoilParams::default();
        let zero = CutState {
            depth: 0.0,
            width: 3.5,
            advance_speed: 0.0,
        };
        assert_eq!(dig_resistance(&soil, &zero).unwrap(), 0.0);
        let neg = CutState {
            depth: 0.3,
            width: -1.0,
            advance_speed: 0.0,
        };
        assert!(dig_resistance(&soil, &neg).is_err());
        let nan = CutState {
            depth: f64::NAN,
            width: 1.0,
            advance_speed: 0.0,
        };
        assert!(matches!(dig_resistance(&soil, &nan), Err(Error::NonFinite { .. })));
        let shallow = CutState {
            depth: 1.0,
            width: 3.5,
            advance_speed: 0.0,
        };
        let deep = CutState { depth: 2.0, ..shallow };
        let f1 = dig_resistance(&soil, &shallow).unwrap();
        let f2 = dig_resistance(&soil, &deep).unwrap();
        assert!(f2 > 2.0 * f1);
    }

    #[test]
    fn excavate_ten_cells_of_uniform_pile() {
        let mut hf = Heightfield::standard_flat();
        hf.heights.iter_mut().for_each(|h| *h = 1.0);
        // Centres of lateral cells 0..10 in row 20.
        let (x_lo, y) = hf.cell_center(0, 20);
        let (x_hi, _) = hf.cell_center(9, 20);
        let region = SweptRegion {
            x_min: x_lo - 0.01,
            x_max: x_hi + 0.01,
            y_min: y - 0.01,
            y_max: y + 0.01,
            cut_height: 0.0,
        };
        let removed = excavate(&mut hf, &region);
        assert!((removed - 1.024).abs() < 1e-12, "{removed}");
        assert_eq!(excavate(&mut hf, &region), 0.0);
    }

    #[test]
    fn excavate_outside_pile_is_noop() {
        let drift = DriftGeometry::default();
        let mut hf = generate_pile(&PileSpec::new(PileShape::Convex), &drift, &mut rng(0)).unwrap();
        let before = hf.clone();
        let region = SweptRegion {
            x_min: -1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 3.0,
            cut_height: 0.0,
        };
        assert_eq!(excavate(&mut hf, &region), 0.0);
        assert_eq!(hf, before);
    }

    #[test]
    fn pile_mass_of_ten_by_ten_block() {
        let mut hf = Heightfield::standard_flat();
        for j in 0..10 {
            for i in 0..10 {
                hf.set(i, j, 1.0);
            }
        }
        let soil = SoilParams::default();
        assert!((pile_mass(&hf, &soil) - 27.648).abs() < 1e-9);
        assert_eq!(pile_mass(&Heightfield::standard_flat(), &soil), 0.0);
    }

    fn straight_toe() -> Heightfield {
        let mut hf = Heightfield::standard_flat();
        for j in 30..hf.ny {
            for i in 0..hf.nx {
                hf.set(i, j, 1.0);
            }
        }
        hf
    }

    #[test]
    fn edge_metric_straight_and_protruding_toe() {
        let mut hf = straight_toe();
        assert_eq!(pile_edge_metrics(&hf), 0.0);
        hf.set(5, 29, 1.0);
        hf.set(5, 28, 1.0);
        assert!((pile_edge_metrics(&hf) - 0.64).abs() < 1e-12);
        assert_eq!(pile_edge_metrics(&Heightfield::standard_flat()), 0.0);
    }

    #[test]
    fn planarity_at_d0() {
        let s = planarity(2f64.sqrt(), 2f64.sqrt());
        assert!((s - (-1f64).exp()).abs() < 1e-15);
        assert!((s - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn pool_generations() {
        let drift = DriftGeometry::default();
        let mut r = rng(5);
        let mut pool = PilePool::with_initial_piles(&drift, &mut r).unwrap();
        assert_eq!(pool.draw(&mut r, 0).unwrap().generation, 0);
        let hf = pool.entries[0].heightfield.clone();
        assert_eq!(pool.push(hf.clone(), 1), 2);
        assert_eq!(pool.push(hf, 2), 3);
        for _ in 0..200 {
            assert!(pool.draw(&mut r, 2).unwrap().generation <= 2);
        }
        assert!(matches!(PilePool::new().draw(&mut r, 0), Err(Error::EmptyPool { .. })));
    }

    #[test]
    fn snapshot_roundtrip() {
        let drift = DriftGeometry::default();
        let hf = generate_pile(&PileSpec::new(PileShape::Concave), &drift, &mut rng(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pile.json");
        PileSnapshot::new(&hf, 1, Some(PileShape::Concave)).save(&path).unwrap();
        let back = PileSnapshot::load(&path).unwrap();
        assert_eq!(back.generation, 1);
        assert_eq!(back.into_heightfield().unwrap(), hf);
    }
}

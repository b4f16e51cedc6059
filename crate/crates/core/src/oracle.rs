//! Independent reference computations used by the self-test suite:
//! brute-force ray marching, central-difference gradients and a cell-wise
//! soil ledger.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{DriftGeometry, Vec3};
use crate::nn::policy;
use crate::nn::{Activation, Conv2d, ConvGeometry, ConvSpec, Dense, Layer, NetInput, NetSpec, Sequential, Tensor, TwoBranchNet, VisualSpec};
use crate::sensors::{cast_ray, lidar_origin, lidar_scan, Camera, LIDAR_AZIMUTHS_DEG, MAX_RANGE};
use crate::soil::{excavate, generate_pile, Heightfield, PileShape, PileSpec, SweptRegion};
use crate::vehicle::{fill_bucket, VehicleParams, VehicleState};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (limit {:.1e}, {} samples)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.samples
        )
    }
}

fn inside_solid(drift: &DriftGeometry, hf: &Heightfield, p: Vec3) -> bool {
    !drift.contains(p) || p.z <= hf.height_at(p.x, p.y)
}

/// Range to the first solid point found by marching in steps of `step`,
/// refined by bisection. Rays that find nothing return `max_range`.
pub fn ray_march(drift: &DriftGeometry, hf: &Heightfield, origin: Vec3, dir: Vec3, max_range: f64, step: f64) -> f64 {
    let mut prev = 0.0;
    let mut t = step;
    while t <= max_range + step {
        let tt = t.min(max_range);
        if inside_solid(drift, hf, origin.at(dir, tt)) {
            let (mut lo, mut hi) = (prev, tt);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside_solid(drift, hf, origin.at(dir, mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi.min(max_range);
        }
        if tt >= max_range {
            break;
        }
        prev = tt;
        t += step;
    }
    max_range
}

fn random_scene(rng: &mut ChaCha8Rng) -> Result<(Heightfield, VehicleState)> {
    let drift = DriftGeometry::default();
    let shape = PileShape::ALL[rng.random_range(0..4)];
    let mut spec = PileSpec::new(shape);
    spec.apex_height = rng.random_range(1.5..3.5);
    spec.toe_position = rng.random_range(6.0..11.0);
    spec.roughness = rng.random_range(0.0..0.1);
    let mut hf = generate_pile(&spec, &drift, rng)?;
    for _ in 0..rng.random_range(0..4) {
        let x = rng.random_range(-3.5..3.5);
        let y = rng.random_range(5.0..14.0);
        excavate(
            &mut hf,
            &SweptRegion {
                x_min: x - 1.0,
                x_max: x + 1.0,
                y_min: y,
                y_max: y + rng.random_range(0.3..2.0),
                cut_height: rng.random_range(0.0..1.5),
            },
        );
    }
    let mut state = VehicleState::parked(rng.random_range(-2.5..2.5), rng.random_range(-4.0..4.0));
    state.heading = rng.random_range(-0.4..0.4);
    Ok((hf, state))
}

/// Depth camera and lidar ranges against [`ray_march`] on random piles,
/// random vehicle poses and the tunnel camera. Reports the largest
/// absolute range error in metres.
pub fn sensor_check(scenes: usize, pixels_per_scene: usize, seed: u64) -> Result<CheckReport> {
    let drift = DriftGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    let step = 2e-3;
    for _ in 0..scenes {
        let (hf, state) = random_scene(&mut rng)?;
        for cam in [Camera::vehicle_mounted(&state), Camera::tunnel(rng.random_range(6.0..11.0))] {
            let k = cam.intrinsics;
            for _ in 0..pixels_per_scene {
                let (u, v) = (rng.random_range(0..k.width), rng.random_range(0..k.height));
                let dir = cam.ray(u, v);
                let fast = cast_ray(&drift, &hf, cam.pose.position, dir, k.max_range);
                let slow = ray_march(&drift, &hf, cam.pose.position, dir, k.max_range, step);
                worst = worst.max((fast - slow).abs());
                samples += 1;
            }
        }
        let scan = lidar_scan(&state, &drift, &hf);
        let o = lidar_origin(&state);
        for (d, az) in scan.distances.iter().zip(LIDAR_AZIMUTHS_DEG) {
            let a = state.heading + az.to_radians();
            let slow = ray_march(&drift, &hf, o, Vec3::new(a.sin(), a.cos(), 0.0), MAX_RANGE, step);
            worst = worst.max((d - slow).abs());
            samples += 1;
        }
    }
    Ok(CheckReport {
        name: "sensor ranges vs ray march (m)".into(),
        worst,
        tolerance: 0.16,
        samples,
    })
}

/// Randomized cuts into random piles. The pile's loss is recomputed cell
/// by cell from before/after snapshots and compared with the removed
/// volume; the bucket must retain the removed volume minus spill.
pub fn mass_conservation_check(steps: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = VehicleParams::default();
    let mut worst: f64 = 0.0;
    let mut hf = Heightfield::standard_flat();
    let mut bucket = VehicleState::parked(0.0, 0.0);
    for step in 0..steps {
        if step % 100 == 0 {
            hf = random_scene(&mut rng)?.0;
            bucket = VehicleState::parked(0.0, 0.0);
        }
        let density = rng.random_range(2500.0..2900.0);
        let x = rng.random_range(-4.5..4.5);
        let y = rng.random_range(0.0..19.0);
        let region = SweptRegion {
            x_min: x,
            x_max: x + rng.random_range(0.0..3.5),
            y_min: y,
            y_max: y + rng.random_range(0.0..1.0),
            cut_height: rng.random_range(-0.2..3.0),
        };
        let before = hf.heights.clone();
        let removed = excavate(&mut hf, &region);
        let area = hf.cell_size * hf.cell_size;
        let lost: f64 = before.iter().zip(&hf.heights).map(|(b, a)| (b - a) * area).sum();
        let lost_mass = lost * density;
        let removed_mass = removed * density;
        let err = if removed_mass == 0.0 {
            if lost_mass == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (lost_mass - removed_mass).abs() / removed_mass
        };
        let (next, spill) = fill_bucket(&bucket, &params, removed);
        let gained = next.fill_volume - bucket.fill_volume;
        let bucket_err = ((gained + spill) - removed).abs() / removed.max(f64::MIN_POSITIVE);
        worst = worst.max(err).max(if removed > 0.0 { bucket_err } else { 0.0 });
        if hf.heights.iter().any(|h| *h < 0.0) {
            worst = f64::INFINITY;
        }
        bucket = next;
    }
    Ok(CheckReport {
        name: "soil mass conservation (relative)".into(),
        worst,
        tolerance: 1e-9,
        samples: steps,
    })
}

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-5;
const MAX_PROBES: usize = 24;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Indices to probe: all of them for small tensors, a random subset
/// otherwise.
fn probes(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    if len <= MAX_PROBES {
        (0..len).collect()
    } else {
        (0..MAX_PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

/// A differentiable module under test, seen as `x ↦ y` with parameters.
trait Module {
    fn infer(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>>;
    /// Input gradient, or `None` when the module does not expose one.
    fn backward(&mut self, gy: &[f64]) -> Result<Option<Vec<f64>>>;
    fn params(&mut self) -> Vec<(&mut Tensor<f64>, &mut Tensor<f64>)>;
}

struct LayerModule(Layer<f64>, usize);

impl Module for LayerModule {
    fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.infer(x, self.1)
    }
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.forward(x, self.1)
    }
    fn backward(&mut self, gy: &[f64]) -> Result<Option<Vec<f64>>> {
        self.0.backward(gy).map(Some)
    }
    fn params(&mut self) -> Vec<(&mut Tensor<f64>, &mut Tensor<f64>)> {
        self.0.params_mut()
    }
}

struct SeqModule(Sequential<f64>, usize);

impl Module for SeqModule {
    fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.infer(x, self.1)
    }
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.forward(x, self.1)
    }
    fn backward(&mut self, gy: &[f64]) -> Result<Option<Vec<f64>>> {
        self.0.backward(gy).map(Some)
    }
    fn params(&mut self) -> Vec<(&mut Tensor<f64>, &mut Tensor<f64>)> {
        self.0.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}

/// Input is the scalar block followed by the image block.
struct NetModule(TwoBranchNet<f64>, usize);

impl NetModule {
    fn split<'a>(&self, x: &'a [f64]) -> NetInput<'a, f64> {
        let s = self.0.spec.scalar_inputs * self.1;
        NetInput {
            scalars: &x[..s],
            image: self.0.spec.visual.as_ref().map(|_| &x[s..]),
            batch: self.1,
        }
    }
}

impl Module for NetModule {
    fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.infer(self.split(x))
    }
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.0.spec.scalar_inputs * self.1;
        let image = self.0.spec.visual.as_ref().map(|_| &x[s..]);
        self.0.forward(NetInput {
            scalars: &x[..s],
            image,
            batch: self.1,
        })
    }
    fn backward(&mut self, gy: &[f64]) -> Result<Option<Vec<f64>>> {
        self.0.backward(gy)?;
        Ok(None)
    }
    fn params(&mut self) -> Vec<(&mut Tensor<f64>, &mut Tensor<f64>)> {
        self.0.params_mut()
    }
}

fn check_module(m: &mut dyn Module, x: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    for (_, g) in m.params() {
        g.fill_zero();
    }
    let y = m.forward(x)?;
    let gy = normal_vec(rng, y.len());
    let gx = m.backward(&gy)?;
    let loss = |m: &dyn Module, x: &[f64]| -> Result<f64> { Ok(dot(&m.infer(x)?, &gy)) };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    if let Some(gx) = gx {
        for i in probes(rng, x.len()) {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            let fd = (loss(m, &xp)? - loss(m, &xm)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(gx[i], fd));
            n += 1;
        }
    }
    let shapes: Vec<usize> = m.params().iter().map(|(p, _)| p.len()).collect();
    for (t, len) in shapes.into_iter().enumerate() {
        for i in probes(rng, len) {
            let analytic = m.params()[t].1.values[i];
            let orig = m.params()[t].0.values[i];
            m.params()[t].0.values[i] = orig + FD_STEP;
            let lp = loss(m, x)?;
            m.params()[t].0.values[i] = orig - FD_STEP;
            let lm = loss(m, x)?;
            m.params()[t].0.values[i] = orig;
            worst = worst.max(rel_err(analytic, (lp - lm) / (2.0 * FD_STEP)));
            n += 1;
        }
    }
    Ok((worst, n))
}

/// Inputs bounded away from the ReLU kink.
fn kink_free(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect()
}

fn randomize(m: &mut dyn Module, rng: &mut ChaCha8Rng, scale: f64) {
    for (p, _) in m.params() {
        for v in &mut p.values {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Central differences in 64-bit against every backward pass: dense,
/// convolution, both activations, stacked networks, the two-branch
/// network and the squashed-Gaussian head.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, (worst, samples): (f64, usize)| {
        out.push(CheckReport {
            name: format!("gradient {name}"),
            worst,
            tolerance: 1e-4,
            samples,
        });
    };

    let batch = 3;
    let mut dense = LayerModule(Layer::Dense(Dense::zeros(7, 5)), batch);
    randomize(&mut dense, &mut rng, 0.5);
    let x = normal_vec(&mut rng, 7 * batch);
    push("dense", check_module(&mut dense, &x, &mut rng)?);

    let g = ConvGeometry {
        in_h: 9,
        in_w: 11,
        in_c: 2,
        out_c: 3,
        kernel: 3,
        stride: 2,
    };
    let mut conv = LayerModule(Layer::Conv2d(Conv2d::zeros(g)), 2);
    randomize(&mut conv, &mut rng, 0.5);
    let x = normal_vec(&mut rng, g.in_len() * 2);
    push("conv2d", check_module(&mut conv, &x, &mut rng)?);

    for kind in [Activation::Relu, Activation::Tanh] {
        let mut act = LayerModule(Layer::activation(kind), batch);
        let x = kink_free(&mut rng, 6 * batch);
        push(&format!("{kind:?}").to_lowercase(), check_module(&mut act, &x, &mut rng)?);
    }

    let mut mlp = SeqModule(Sequential::mlp(6, &[8, 8], Activation::Tanh, &mut rng), batch);
    let x = normal_vec(&mut rng, 6 * batch);
    push("tanh mlp", check_module(&mut mlp, &x, &mut rng)?);

    let spec = NetSpec {
        scalar_inputs: 5,
        scalar_hidden: vec![6],
        visual: Some(VisualSpec {
            height: 10,
            width: 12,
            channels: 1,
            conv: vec![
                ConvSpec {
                    channels: 3,
                    kernel: 4,
                    stride: 2,
                },
                ConvSpec {
                    channels: 4,
                    kernel: 2,
                    stride: 1,
                },
            ],
            hidden: vec![5],
        }),
        outputs: 4,
        activation: Activation::Relu,
    };
    let mut net = NetModule(TwoBranchNet::new(spec, 1.0, &mut rng)?, 2);
    let x = normal_vec(&mut rng, (5 + 120) * 2);
    push("two-branch relu net", check_module(&mut net, &x, &mut rng)?);

    let n = 3;
    let head = normal_vec(&mut rng, 2 * n * batch);
    let noise = normal_vec(&mut rng, n * batch);
    let ga = normal_vec(&mut rng, n * batch);
    let gl = normal_vec(&mut rng, batch);
    let loss = |h: &[f64]| -> Result<f64> {
        let (a, lp, _) = policy::sample(h, n, &noise)?;
        Ok(dot(&a, &ga) + dot(&lp, &gl))
    };
    let (_, _, cache) = policy::sample(&head, n, &noise)?;
    let analytic: Vec<f64> = policy::backward(&cache, &ga, &gl)?;
    let mut worst: f64 = 0.0;
    for i in 0..head.len() {
        let mut hp = head.clone();
        let mut hm = head.clone();
        hp[i] += FD_STEP;
        hm[i] -= FD_STEP;
        worst = worst.max(rel_err(analytic[i], (loss(&hp)? - loss(&hm)?) / (2.0 * FD_STEP)));
    }
    push("squashed gaussian head", (worst, head.len()));
    Ok(out)
}

/// Every suite with the sample sizes used by the self-test command.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = gradient_checks(seed)?;
    out.push(sensor_check(100, 40, seed)?);
    out.push(mass_conservation_check(1000, seed)?);
    Ok(out)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, ConvGeometry, Conv2d, Dense, Layer};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Layers applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Sequential<T: Real> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    /// Dense layers of the given widths, each followed by `activation`.
    pub fn mlp<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            layers.push(Layer::Dense(Dense::orthogonal(width, h, 2f64.sqrt(), rng)));
            layers.push(Layer::activation(activation));
            width = h;
        }
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.infer(&h, batch)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let mut h = x.to_vec();
        for l in &mut self.layers {
            h = l.forward(&h, batch)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let mut g = gy.to_vec();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<(&'a mut Tensor<T>, &'a mut Tensor<T>)>) {
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
    }

    fn collect_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            for (p, name) in l.params().into_iter().zip(["weight", "bias"]) {
                out.push((format!("{prefix}.{i}.{name}"), p));
            }
        }
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    fn cast<U: Real>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
}

impl VisualSpec {
    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Architecture of a scalar MLP branch, an optional convolutional branch
/// and a linear head over their concatenated features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub scalar_inputs: usize,
    pub scalar_hidden: Vec<usize>,
    pub visual: Option<VisualSpec>,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TwoBranchNet<T: Real> {
    pub spec: NetSpec,
    pub scalar: Sequential<T>,
    pub visual: Option<Sequential<T>>,
    pub head: Dense<T>,
    scalar_width: usize,
    visual_width: usize,
}

/// One batch of network inputs.
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a, T> {
    pub scalars: &'a [T],
    pub image: Option<&'a [T]>,
    pub batch: usize,
}

impl<T: Real> TwoBranchNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, head_gain: f64, rng: &mut R) -> Result<Self> {
        if spec.outputs == 0 || (spec.scalar_inputs == 0 && spec.visual.is_none()) {
            return Err(Error::InvalidArgument("network needs inputs and outputs".into()));
        }
        if spec.scalar_inputs == 0 && !spec.scalar_hidden.is_empty() {
            return Err(Error::InvalidArgument("scalar layers without scalar inputs".into()));
        }
        let scalar = Sequential::mlp(spec.scalar_inputs, &spec.scalar_hidden, spec.activation, rng);
        let scalar_width = spec.scalar_hidden.last().copied().unwrap_or(spec.scalar_inputs);
        let (visual, visual_width) = match &spec.visual {
            None => (None, 0),
            Some(v) => {
                let mut layers = Vec::new();
                let (mut h, mut w, mut c) = (v.height, v.width, v.channels);
                for cs in &v.conv {
                    if cs.kernel > h || cs.kernel > w || cs.stride == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "kernel {} stride {} does not fit {h}x{w}",
                            cs.kernel, cs.stride
                        )));
                    }
                    let g = ConvGeometry {
                        in_h: h,
                        in_w: w,
                        in_c: c,
                        out_c: cs.channels,
                        kernel: cs.kernel,
                        stride: cs.stride,
                    };
                    layers.push(Layer::Conv2d(Conv2d::fan_in(g, rng)));
                    layers.push(Layer::activation(spec.activation));
                    (h, w, c) = (g.out_h(), g.out_w(), g.out_c);
                }
                let flat = h * w * c;
                let mlp = Sequential::mlp(flat, &v.hidden, spec.activation, rng);
                layers.extend(mlp.layers);
                (Some(Sequential::new(layers)), v.hidden.last().copied().unwrap_or(flat))
            }
        };
        let head = Dense::orthogonal(scalar_width + visual_width, spec.outputs, head_gain, rng);
        Ok(Self {
            spec,
            scalar,
            visual,
            head,
            scalar_width,
            visual_width,
        })
    }

    pub fn param_count(&self) -> usize {
        self.scalar.param_count() + self.visual.as_ref().map_or(0, Sequential::param_count) + self.head.param_count()
    }

    fn check_input(&self, input: &NetInput<'_, T>) -> Result<()> {
        if input.scalars.len() != input.batch * self.spec.scalar_inputs {
            return Err(Error::ShapeMismatch {
                context: "scalar input",
                expected: vec![input.batch, self.spec.scalar_inputs],
                actual: vec![input.scalars.len()],
            });
        }
        match (&self.spec.visual, input.image) {
            (None, None) => Ok(()),
            (Some(v), Some(img)) if img.len() == input.batch * v.input_len() => Ok(()),
            (Some(v), img) => Err(Error::ShapeMismatch {
                context: "image input",
                expected: vec![input.batch, v.height, v.width, v.channels],
                actual: vec![img.map_or(0, <[T]>::len)],
            }),
            (None, Some(img)) => Err(Error::ShapeMismatch {
                context: "image input",
                expected: vec![0],
                actual: vec![img.len()],
            }),
        }
    }

    fn concat(&self, s: &[T], v: Option<&[T]>, batch: usize) -> Vec<T> {
        let width = self.scalar_width + self.visual_width;
        let mut out = Vec::with_capacity(batch * width);
        for b in 0..batch {
            out.extend_from_slice(&s[b * self.scalar_width..(b + 1) * self.scalar_width]);
            if let Some(v) = v {
                out.extend_from_slice(&v[b * self.visual_width..(b + 1) * self.visual_width]);
            }
        }
        out
    }

    /// Forward pass without caching activations.
    pub fn infer(&self, input: NetInput<'_, T>) -> Result<Vec<T>> {
        self.check_input(&input)?;
        let s = self.scalar.infer(input.scalars, input.batch)?;
        let v = match (&self.visual, input.image) {
            (Some(net), Some(img)) => Some(net.infer(img, input.batch)?),
            _ => None,
        };
        self.head.infer(&self.concat(&s, v.as_deref(), input.batch), input.batch)
    }

    /// Forward pass that caches activations for [`Self::backward`].
    pub fn forward(&mut self, input: NetInput<'_, T>) -> Result<Vec<T>> {
        self.check_input(&input)?;
        let s = self.scalar.forward(input.scalars, input.batch)?;
        let v = match (&mut self.visual, input.image) {
            (Some(net), Some(img)) => Some(net.forward(img, input.batch)?),
            _ => None,
        };
        let joined = self.concat(&s, v.as_deref(), input.batch);
        self.head.forward(&joined, input.batch)
    }

    /// Accumulates parameter gradients and returns the gradient with
    /// respect to the scalar input.
    pub fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let gj = self.head.backward(gy)?;
        let width = self.scalar_width + self.visual_width;
        let batch = gj.len() / width;
        let mut gs = Vec::with_capacity(batch * self.scalar_width);
        let mut gv = Vec::with_capacity(batch * self.visual_width);
        for row in gj.chunks_exact(width) {
            gs.extend_from_slice(&row[..self.scalar_width]);
            gv.extend_from_slice(&row[self.scalar_width..]);
        }
        if let Some(net) = &mut self.visual {
            net.backward(&gv)?;
        }
        self.scalar.backward(&gs)
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.scalar.collect_mut(&mut out);
        if let Some(v) = &mut self.visual {
            v.collect_mut(&mut out);
        }
        out.push((&mut self.head.weight, &mut self.head.grad_weight));
        out.push((&mut self.head.bias, &mut self.head.grad_bias));
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.scalar.collect_named("scalar", &mut out);
        if let Some(v) = &self.visual {
            v.collect_named("visual", &mut out);
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, g) in self.params_mut() {
            g.fill_zero();
        }
    }

    pub fn clear_cache(&mut self) {
        self.scalar.clear_cache();
        if let Some(v) = &mut self.visual {
            v.clear_cache();
        }
        self.head.clear_cache();
    }

    /// Copies parameter values (not gradients) from `other`.
    pub fn copy_from(&mut self, other: &Self) -> Result<()> {
        self.soft_update(other, 1.0)
    }

    /// `θ ← τ·θ_other + (1 − τ)·θ`
    pub fn soft_update(&mut self, other: &Self, tau: f64) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::InvalidArgument("soft update between different architectures".into()));
        }
        let tau = T::of(tau);
        let keep = T::one() - tau;
        let src: Vec<&Tensor<T>> = other.named_params().into_iter().map(|(_, t)| t).collect();
        for ((dst, _), s) in self.params_mut().into_iter().zip(src) {
            for (d, v) in dst.values.iter_mut().zip(&s.values) {
                *d = tau * *v + keep * *d;
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> TwoBranchNet<U> {
        TwoBranchNet {
            spec: self.spec.clone(),
            scalar: self.scalar.cast(),
            visual: self.visual.as_ref().map(Sequential::cast),
            head: match Layer::Dense(self.head.clone()).cast() {
                Layer::Dense(d) => d,
                _ => unreachable!("dense casts to dense"),
            },
            scalar_width: self.scalar_width,
            visual_width: self.visual_width,
        }
    }

    /// Replaces parameter values by name, checking every shape.
    pub fn load_named(&mut self, tensors: &std::collections::BTreeMap<String, Tensor<T>>) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for name in &names {
            if !tensors.contains_key(name) {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    reason: format!("missing tensor {name}"),
                });
            }
        }
        for (name, (dst, _)) in names.iter().zip(self.params_mut()) {
            let src = &tensors[name];
            if src.shape != dst.shape {
                return Err(Error::ShapeMismatch {
                    context: "checkpoint tensor",
                    expected: dst.shape.clone(),
                    actual: src.shape.clone(),
                });
            }
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}

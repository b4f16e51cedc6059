//! Dense, convolution and activation layers with explicit backward passes.
//!
//! Activations are batch-major. Images use NHWC layout, so a convolution
//! output can be flattened for a dense layer without reordering.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dense<T: Real> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    #[serde(skip)]
    cache: Option<(Vec<T>, usize)>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: Tensor::zeros(vec![inputs, outputs]),
            bias: Tensor::zeros(vec![outputs]),
            grad_weight: Tensor::zeros(vec![inputs, outputs]),
            grad_bias: Tensor::zeros(vec![outputs]),
            cache: None,
        }
    }

    /// Orthogonal initialization scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let w = orthogonal_matrix(inputs, outputs, rng);
        d.weight.values = w.into_iter().map(|v| T::of(gain * v)).collect();
        d
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n, n);
        for i in 0..n {
            d.weight.values[i * n + i] = T::one();
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("dense input", x.len(), batch * self.inputs, &[batch, self.inputs])?;
        let mut y = vec![T::zero(); batch * self.outputs];
        for row in y.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias.values);
        }
        T::gemm(
            batch,
            self.inputs,
            self.outputs,
            T::one(),
            x,
            self.inputs as isize,
            1,
            &self.weight.values,
            self.outputs as isize,
            1,
            T::one(),
            &mut y,
            self.outputs as isize,
            1,
        );
        Ok(y)
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let y = self.infer(x, batch)?;
        self.cache = Some((x.to_vec(), batch));
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let (x, batch) = self.cache.as_ref().ok_or(Error::MissingCache("dense"))?;
        let batch = *batch;
        check_len("dense output gradient", gy.len(), batch * self.outputs, &[batch, self.outputs])?;
        // dW += xᵀ·gy
        T::gemm(
            self.inputs,
            batch,
            self.outputs,
            T::one(),
            x,
            1,
            self.inputs as isize,
            gy,
            self.outputs as isize,
            1,
            T::one(),
            &mut self.grad_weight.values,
            self.outputs as isize,
            1,
        );
        for row in gy.chunks_exact(self.outputs) {
            for (g, v) in self.grad_bias.values.iter_mut().zip(row) {
                *g = *g + *v;
            }
        }
        // dx = gy·Wᵀ
        let mut gx = vec![T::zero(); batch * self.inputs];
        T::gemm(
            batch,
            self.outputs,
            self.inputs,
            T::one(),
            gy,
            self.outputs as isize,
            1,
            &self.weight.values,
            1,
            self.outputs as isize,
            T::zero(),
            &mut gx,
            self.inputs as isize,
            1,
        );
        Ok(gx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w() * self.out_c
    }
}

/// 2-D convolution without padding, computed through an im2col matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Conv2d<T: Real> {
    pub geometry: ConvGeometry,
    /// `[kernel·kernel·in_c, out_c]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    #[serde(skip)]
    cache: Option<(Vec<T>, usize)>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(geometry: ConvGeometry) -> Self {
        let k = geometry.patch();
        Self {
            geometry,
            weight: Tensor::zeros(vec![k, geometry.out_c]),
            bias: Tensor::zeros(vec![geometry.out_c]),
            grad_weight: Tensor::zeros(vec![k, geometry.out_c]),
            grad_bias: Tensor::zeros(vec![geometry.out_c]),
            cache: None,
        }
    }

    /// He-normal weights scaled by the patch fan-in.
    pub fn fan_in<R: Rng + ?Sized>(geometry: ConvGeometry, rng: &mut R) -> Self {
        let mut c = Self::zeros(geometry);
        let std = (2.0 / geometry.patch() as f64).sqrt();
        for w in c.weight.values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = T::of(std * z);
        }
        c
    }

    pub fn param_count(&self) -> usize {
        self.geometry.patch() * self.geometry.out_c + self.geometry.out_c
    }

    fn im2col(&self, x: &[T], batch: usize) -> Vec<T> {
        let g = &self.geometry;
        let (oh, ow, k, c) = (g.out_h(), g.out_w(), g.kernel, g.in_c);
        let patch = g.patch();
        let mut cols = vec![T::zero(); batch * oh * ow * patch];
        for b in 0..batch {
            let img = &x[b * g.in_len()..(b + 1) * g.in_len()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * patch;
                    for ky in 0..k {
                        let src = ((oy * g.stride + ky) * g.in_w + ox * g.stride) * c;
                        let dst = row + ky * k * c;
                        cols[dst..dst + k * c].copy_from_slice(&img[src..src + k * c]);
                    }
                }
            }
        }
        cols
    }

    fn apply(&self, cols: &[T], batch: usize) -> Vec<T> {
        let g = &self.geometry;
        let rows = batch * g.out_h() * g.out_w();
        let mut y = vec![T::zero(); rows * g.out_c];
        for r in y.chunks_exact_mut(g.out_c) {
            r.copy_from_slice(&self.bias.values);
        }
        T::gemm(
            rows,
            g.patch(),
            g.out_c,
            T::one(),
            cols,
            g.patch() as isize,
            1,
            &self.weight.values,
            g.out_c as isize,
            1,
            T::one(),
            &mut y,
            g.out_c as isize,
            1,
        );
        y
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let g = &self.geometry;
        check_len("conv input", x.len(), batch * g.in_len(), &[batch, g.in_h, g.in_w, g.in_c])?;
        Ok(self.apply(&self.im2col(x, batch), batch))
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let g = self.geometry;
        check_len("conv input", x.len(), batch * g.in_len(), &[batch, g.in_h, g.in_w, g.in_c])?;
        let cols = self.im2col(x, batch);
        let y = self.apply(&cols, batch);
        self.cache = Some((cols, batch));
        Ok(y)
    }

    pub fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let g = self.geometry;
        let (cols, batch) = self.cache.as_ref().ok_or(Error::MissingCache("conv2d"))?;
        let batch = *batch;
        let rows = batch * g.out_h() * g.out_w();
        check_len("conv output gradient", gy.len(), rows * g.out_c, &[batch, g.out_h(), g.out_w(), g.out_c])?;
        let patch = g.patch();
        T::gemm(
            patch,
            rows,
            g.out_c,
            T::one(),
            cols,
            1,
            patch as isize,
            gy,
            g.out_c as isize,
            1,
            T::one(),
            &mut self.grad_weight.values,
            g.out_c as isize,
            1,
        );
        for r in gy.chunks_exact(g.out_c) {
            for (gb, v) in self.grad_bias.values.iter_mut().zip(r) {
                *gb = *gb + *v;
            }
        }
        let mut gcols = vec![T::zero(); rows * patch];
        T::gemm(
            rows,
            g.out_c,
            patch,
            T::one(),
            gy,
            g.out_c as isize,
            1,
            &self.weight.values,
            1,
            g.out_c as isize,
            T::zero(),
            &mut gcols,
            patch as isize,
            1,
        );
        // col2im
        let (oh, ow, k, c) = (g.out_h(), g.out_w(), g.kernel, g.in_c);
        let mut gx = vec![T::zero(); batch * g.in_len()];
        for b in 0..batch {
            let img = &mut gx[b * g.in_len()..(b + 1) * g.in_len()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * patch;
                    for ky in 0..k {
                        let dst = ((oy * g.stride + ky) * g.in_w + ox * g.stride) * c;
                        let src = row + ky * k * c;
                        for (d, s) in img[dst..dst + k * c].iter_mut().zip(&gcols[src..src + k * c]) {
                            *d = *d + *s;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum Layer<T: Real> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Activation {
        kind: Activation,
        #[serde(skip)]
        output: Option<Vec<T>>,
    },
}

impl<T: Real> Layer<T> {
    pub fn activation(kind: Activation) -> Self {
        Layer::Activation { kind, output: None }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.param_count(),
            Layer::Conv2d(c) => c.param_count(),
            Layer::Activation { .. } => 0,
        }
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        match self {
            Layer::Dense(d) => d.infer(x, batch),
            Layer::Conv2d(c) => c.infer(x, batch),
            Layer::Activation { kind, .. } => Ok(activate(*kind, x)),
        }
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Result<Vec<T>> {
        match self {
            Layer::Dense(d) => d.forward(x, batch),
            Layer::Conv2d(c) => c.forward(x, batch),
            Layer::Activation { kind, output } => {
                let y = activate(*kind, x);
                *output = Some(y.clone());
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        match self {
            Layer::Dense(d) => d.backward(gy),
            Layer::Conv2d(c) => c.backward(gy),
            Layer::Activation { kind, output } => {
                let y = output.as_ref().ok_or(Error::MissingCache("activation"))?;
                check_len("activation gradient", gy.len(), y.len(), &[y.len()])?;
                Ok(match kind {
                    Activation::Relu => y
                        .iter()
                        .zip(gy)
                        .map(|(y, g)| if *y > T::zero() { *g } else { T::zero() })
                        .collect(),
                    Activation::Tanh => y.iter().zip(gy).map(|(y, g)| *g * (T::one() - *y * *y)).collect(),
                })
            }
        }
    }

    /// Parameter tensors paired with their gradients.
    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Dense(d) => vec![(&mut d.weight, &mut d.grad_weight), (&mut d.bias, &mut d.grad_bias)],
            Layer::Conv2d(c) => vec![(&mut c.weight, &mut c.grad_weight), (&mut c.bias, &mut c.grad_bias)],
            Layer::Activation { .. } => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Activation { .. } => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.cache = None,
            Layer::Conv2d(c) => c.cache = None,
            Layer::Activation { output, .. } => *output = None,
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
                grad_weight: d.grad_weight.cast(),
                grad_bias: d.grad_bias.cast(),
                cache: None,
            }),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                geometry: c.geometry,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                grad_weight: c.grad_weight.cast(),
                grad_bias: c.grad_bias.cast(),
                cache: None,
            }),
            Layer::Activation { kind, .. } => Layer::activation(*kind),
        }
    }
}

fn activate<T: Real>(kind: Activation, x: &[T]) -> Vec<T> {
    match kind {
        Activation::Relu => x.iter().map(|v| v.max(T::zero())).collect(),
        Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
    }
}

fn check_len(context: &'static str, actual: usize, expected: usize, shape: &[usize]) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected: shape.to_vec(),
            actual: vec![actual],
        })
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever is
/// fewer), from modified Gram-Schmidt on Gaussian noise.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let (done, rest) = vecs.split_at_mut(i);
            let proj: f64 = done[j].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (v, q) in rest[0].iter_mut().zip(&done[j]) {
                *v -= proj * q;
            }
        }
        let norm = vecs[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense_passes_input() {
        let d = Dense::<f64>::identity(3);
        let x = [1.0, -2.0, 3.5, 0.0, 4.0, -1.0];
        assert_eq!(d.infer(&x, 2).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_dense_gives_zero() {
        let d = Dense::<f32>::zeros(4, 3);
        assert!(d.infer(&[1.0, 2.0, 3.0, 4.0], 1).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_computed_two_by_two() {
        // y = x·W + b with W = [[1, 2], [3, 4]], b = [0.5, -1]
        // x = [1, 1]  -> [1+3+0.5, 2+4-1] = [4.5, 5]
        // x = [2, -1] -> [2-3+0.5, 4-4-1] = [-0.5, -1]
        let mut d = Dense::<f64>::zeros(2, 2);
        d.weight.values = vec![1.0, 2.0, 3.0, 4.0];
        d.bias.values = vec![0.5, -1.0];
        let y = d.infer(&[1.0, 1.0, 2.0, -1.0], 2).unwrap();
        assert_eq!(y, vec![4.5, 5.0, -0.5, -1.0]);
    }

    #[test]
    fn sum_loss_weight_gradient_broadcasts_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = Dense::<f64>::orthogonal(3, 2, 1.0, &mut rng);
        let x = [0.3, -1.2, 2.0];
        d.forward(&x, 1).unwrap();
        d.backward(&[1.0, 1.0]).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                assert_eq!(d.grad_weight.values[i * 2 + o], x[i]);
            }
        }
        assert_eq!(d.grad_bias.values, vec![1.0, 1.0]);
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut d = Dense::<f32>::zeros(2, 2);
        assert!(matches!(d.backward(&[1.0, 1.0]), Err(Error::MissingCache(_))));
        let mut a = Layer::<f32>::activation(Activation::Relu);
        assert!(a.backward(&[1.0]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let d = Dense::<f32>::zeros(3, 2);
        assert!(matches!(d.infer(&[1.0, 2.0], 1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn orthogonal_columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = orthogonal_matrix(6, 3, &mut rng);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..6).map(|r| m[r * 3 + a] * m[r * 3 + b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ConvGeometry {
            in_h: 6,
            in_w: 7,
            in_c: 2,
            out_c: 3,
            kernel: 3,
            stride: 2,
        };
        let conv = Conv2d::<f64>::fan_in(g, &mut rng);
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let y = conv.infer(&x, 1).unwrap();
        for oy in 0..g.out_h() {
            for ox in 0..g.out_w() {
                for oc in 0..g.out_c {
                    let mut s = conv.bias.values[oc];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for c in 0..2 {
                                let xi = ((oy * 2 + ky) * g.in_w + ox * 2 + kx) * 2 + c;
                                let wi = ((ky * 3 + kx) * 2 + c) * 3 + oc;
                                s += x[xi] * conv.weight.values[wi];
                            }
                        }
                    }
                    let got = y[(oy * g.out_w() + ox) * 3 + oc];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}

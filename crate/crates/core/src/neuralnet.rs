//! A small feed-forward engine with hand-written reverse-mode gradients.
//!
//! It covers exactly what the auto-encoder needs: 2-D convolution
//! (cross-correlation with explicit zero padding), dense layers, batch
//! normalization, leaky ReLU, sigmoid and flatten, plus Adam and a
//! central-difference gradient checker. Every layer is generic over
//! [`Real`] (`f32` or `f64`).
//!
//! Tensors are row-major; a batch is `[B, ...]` and images are
//! `[B, C, H, W]`.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating point types the engine runs in.
pub trait Real:
    Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const BITS: u32;

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable")
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite cast")
    }
}

impl Real for f32 {
    const BITS: u32 = 32;
}

impl Real for f64 {
    const BITS: u32 = 64;
}

/// A dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_array(a: Array2<T>) -> Self {
        let shape = vec![a.nrows(), a.ncols()];
        let data = a.as_standard_layout().iter().copied().collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Shape without the batch dimension.
    pub fn sample_shape(&self) -> &[usize] {
        self.shape.get(1..).unwrap_or(&[])
    }

    /// Views the tensor as `[batch, rest]`.
    pub fn as_matrix(&self) -> ArrayView2<'_, T> {
        let b = self.batch();
        let rest = if b == 0 { 0 } else { self.data.len() / b };
        ArrayView2::from_shape((b, rest), &self.data).expect("contiguous")
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Training mode uses batch statistics and caches activations for the
/// backward pass; inference uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, kernel, kernel]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`; `y = x W + b`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
}

/// Normalizes each feature (dense input) or channel (image input).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub features: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the old running value in each update.
    pub momentum: T,
    pub eps: T,
    grad_gamma: Tensor<T>,
    grad_beta: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Dense(Dense<T>),
    BatchNorm(BatchNorm<T>),
    LeakyRelu(T),
    Sigmoid,
    Flatten,
}

enum Cache<T> {
    Conv { cols: Array2<T>, in_shape: Vec<usize> },
    Dense { input: Array2<T> },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T> },
    LeakyRelu { input: Tensor<T> },
    Sigmoid { output: Tensor<T> },
    Flatten { in_shape: Vec<usize> },
}

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect(),
    }
}

impl<T: Real> Conv2d<T> {
    /// Glorot-uniform kernels, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let wshape = [out_channels, in_channels, kernel, kernel];
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: stride.max(1),
            padding,
            weight: uniform_tensor(&wshape, bound, rng),
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&wshape),
            grad_bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        ArrayView2::from_shape(
            (self.out_channels, self.in_channels * self.kernel * self.kernel),
            self.weight.data(),
        )
        .expect("kernel layout")
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Array2<T> {
        let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let k = self.kernel;
        let cols_n = b * oh * ow;
        let mut cols = Array2::<T>::zeros((c * k * k, cols_n));
        let pad = self.padding as isize;
        let s = self.stride as isize;
        let buf = cols.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut buf[row * cols_n..(row + 1) * cols_n];
                    for bi in 0..b {
                        let plane = &x.data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = oy as isize * s + ki as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let base = (bi * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kj as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    dst[base + ox] = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<T>, in_shape: &[usize], oh: usize, ow: usize) -> Tensor<T> {
        let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let k = self.kernel;
        let cols_n = b * oh * ow;
        let mut out = Tensor::zeros(in_shape);
        let pad = self.padding as isize;
        let s = self.stride as isize;
        let buf = cols.as_slice().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &buf[row * cols_n..(row + 1) * cols_n];
                    for bi in 0..b {
                        let plane =
                            &mut out.data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = oy as isize * s + ki as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (bi * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kj as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    plane[iy as usize * w + ix as usize] =
                                        plane[iy as usize * w + ix as usize] + src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Cache<T>) {
        let (b, h, w) = (x.shape[0], x.shape[2], x.shape[3]);
        let (oh, ow) = self.out_hw(h, w).expect("checked by output_shape");
        let cols = self.im2col(x, oh, ow);
        let y = self.weight_matrix().dot(&cols); // [out, B*OH*OW]
        let plane = oh * ow;
        let mut out = Tensor::zeros(&[b, self.out_channels, oh, ow]);
        let ys = y.as_slice().expect("standard layout");
        for o in 0..self.out_channels {
            let bias = self.bias.data[o];
            for bi in 0..b {
                let src = &ys[o * b * plane + bi * plane..o * b * plane + (bi + 1) * plane];
                let dst = &mut out.data[(bi * self.out_channels + o) * plane..][..plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        (
            out,
            Cache::Conv {
                cols,
                in_shape: x.shape.clone(),
            },
        )
    }

    fn backward(&mut self, dy: &Tensor<T>, cols: &Array2<T>, in_shape: &[usize]) -> Tensor<T> {
        let (b, oc, oh, ow) = (dy.shape[0], dy.shape[1], dy.shape[2], dy.shape[3]);
        let plane = oh * ow;
        let mut dmat = Array2::<T>::zeros((oc, b * plane));
        {
            let dm = dmat.as_slice_mut().expect("standard layout");
            for o in 0..oc {
                for bi in 0..b {
                    let src = &dy.data[(bi * oc + o) * plane..][..plane];
                    dm[o * b * plane + bi * plane..][..plane].copy_from_slice(src);
                }
            }
        }
        let gw = dmat.dot(&cols.t());
        self.grad_weight
            .data
            .iter_mut()
            .zip(gw.iter())
            .for_each(|(d, &s)| *d = s);
        for (o, g) in self.grad_bias.data.iter_mut().enumerate() {
            *g = dmat.row(o).sum();
        }
        let dcols = self.weight_matrix().t().dot(&dmat);
        self.col2im(&dcols, in_shape, oh, ow)
    }
}

impl<T: Real> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self::with_weight(inputs, outputs, uniform_tensor(&[inputs, outputs], bound, rng))
    }

    pub fn with_weight(inputs: usize, outputs: usize, weight: Tensor<T>) -> Self {
        Self {
            inputs,
            outputs,
            weight,
            bias: Tensor::zeros(&[outputs]),
            grad_weight: Tensor::zeros(&[inputs, outputs]),
            grad_bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn weight_matrix(&self) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((self.inputs, self.outputs), self.weight.data()).expect("layout")
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Cache<T>) {
        let input = x.as_matrix().to_owned();
        let mut y = input.dot(&self.weight_matrix());
        for mut row in y.rows_mut() {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v = *v + b;
            }
        }
        (Tensor::from_array(y), Cache::Dense { input })
    }

    fn backward(&mut self, dy: &Tensor<T>, input: &Array2<T>) -> Tensor<T> {
        let d = dy.as_matrix();
        let gw = input.t().dot(&d);
        self.grad_weight
            .data
            .iter_mut()
            .zip(gw.iter())
            .for_each(|(g, &s)| *g = s);
        let gb = d.sum_axis(Axis(0));
        self.grad_bias
            .data
            .iter_mut()
            .zip(gb.iter())
            .for_each(|(g, &s)| *g = s);
        Tensor::from_array(d.dot(&self.weight_matrix().t()))
    }
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        let ones = Tensor {
            shape: vec![features],
            data: vec![T::one(); features],
        };
        Self {
            features,
            gamma: ones.clone(),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: ones,
            momentum: T::of(momentum),
            eps: T::of(eps),
            grad_gamma: Tensor::zeros(&[features]),
            grad_beta: Tensor::zeros(&[features]),
        }
    }

    /// `(batch, features, spatial)` layout of an input tensor.
    fn layout(x: &Tensor<T>) -> (usize, usize, usize) {
        let b = x.shape[0];
        let f = x.shape[1];
        let spatial = x.shape[2..].iter().product::<usize>();
        (b, f, spatial)
    }

    /// Per-feature batch mean and biased variance.
    fn batch_stats(&self, x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let (b, f, sp) = Self::layout(x);
        let count = T::of((b * sp) as f64);
        let mut mean = vec![T::zero(); f];
        let mut var = vec![T::zero(); f];
        for (fi, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
            let mut s = T::zero();
            for bi in 0..b {
                s = s + x.data[(bi * f + fi) * sp..][..sp].iter().copied().sum::<T>();
            }
            *m = s / count;
            let mut q = T::zero();
            for bi in 0..b {
                q = q + x.data[(bi * f + fi) * sp..][..sp]
                    .iter()
                    .map(|&xv| (xv - *m) * (xv - *m))
                    .sum::<T>();
            }
            *v = q / count;
        }
        (mean, var)
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> (Tensor<T>, Option<Cache<T>>, Option<(Vec<T>, Vec<T>)>) {
        let (b, f, sp) = Self::layout(x);
        let (mean, var, stats) = match mode {
            Mode::Training => {
                let (m, v) = self.batch_stats(x);
                (m.clone(), v.clone(), Some((m, v)))
            }
            Mode::Inference => (
                self.running_mean.data.clone(),
                self.running_var.data.clone(),
                None,
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut out = Tensor::zeros(&x.shape);
        let mut xhat = vec![T::zero(); x.len()];
        for bi in 0..b {
            for fi in 0..f {
                let off = (bi * f + fi) * sp;
                let (g, be) = (self.gamma.data[fi], self.beta.data[fi]);
                for i in off..off + sp {
                    let xh = (x.data[i] - mean[fi]) * inv_std[fi];
                    xhat[i] = xh;
                    out.data[i] = g * xh + be;
                }
            }
        }
        let cache = (mode == Mode::Training).then_some(Cache::BatchNorm { xhat, inv_std });
        (out, cache, stats)
    }

    fn update_running(&mut self, mean: &[T], var: &[T]) {
        let m = self.momentum;
        let one = T::one();
        for (r, &v) in self.running_mean.data.iter_mut().zip(mean) {
            *r = m * *r + (one - m) * v;
        }
        for (r, &v) in self.running_var.data.iter_mut().zip(var) {
            *r = m * *r + (one - m) * v;
        }
    }

    fn backward(&mut self, dy: &Tensor<T>, xhat: &[T], inv_std: &[T]) -> Tensor<T> {
        let (b, f, sp) = Self::layout(dy);
        let n = T::of((b * sp) as f64);
        let mut dx = Tensor::zeros(&dy.shape);
        for fi in 0..f {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for bi in 0..b {
                let off = (bi * f + fi) * sp;
                for i in off..off + sp {
                    sum_dy = sum_dy + dy.data[i];
                    sum_dy_xhat = sum_dy_xhat + dy.data[i] * xhat[i];
                }
            }
            self.grad_gamma.data[fi] = sum_dy_xhat;
            self.grad_beta.data[fi] = sum_dy;
            let scale = self.gamma.data[fi] * inv_std[fi] / n;
            for bi in 0..b {
                let off = (bi * f + fi) * sp;
                for i in off..off + sp {
                    dx.data[i] = scale * (n * dy.data[i] - sum_dy - xhat[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::LeakyRelu(_) => "leaky_relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(format!(
                        "expects [{}, H, W], got {input:?}",
                        c.in_channels
                    ));
                }
                let (oh, ow) = c
                    .out_hw(input[1], input[2])
                    .ok_or_else(|| format!("input {input:?} smaller than the kernel"))?;
                Ok(vec![c.out_channels, oh, ow])
            }
            Layer::Dense(d) => {
                if input != [d.inputs] {
                    return Err(format!("expects [{}], got {input:?}", d.inputs));
                }
                Ok(vec![d.outputs])
            }
            Layer::BatchNorm(bn) => {
                if input.first() != Some(&bn.features) {
                    return Err(format!(
                        "expects {} features/channels, got {input:?}",
                        bn.features
                    ));
                }
                Ok(input.to_vec())
            }
            Layer::LeakyRelu(_) | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> (Tensor<T>, Option<Cache<T>>, Option<(Vec<T>, Vec<T>)>) {
        let train = mode == Mode::Training;
        match self {
            Layer::Conv2d(c) => {
                let (y, cache) = c.forward(x);
                (y, train.then_some(cache), None)
            }
            Layer::Dense(d) => {
                let (y, cache) = d.forward(x);
                (y, train.then_some(cache), None)
            }
            Layer::BatchNorm(bn) => bn.forward(x, mode),
            Layer::LeakyRelu(slope) => {
                let s = *slope;
                let y = x.map(|v| if v > T::zero() { v } else { s * v });
                (y, train.then(|| Cache::LeakyRelu { input: x.clone() }), None)
            }
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                let cache = train.then(|| Cache::Sigmoid { output: y.clone() });
                (y, cache, None)
            }
            Layer::Flatten => {
                let b = x.batch();
                let rest = x.sample_shape().iter().product();
                let y = x.clone().reshape(vec![b, rest]).expect("same size");
                (y, train.then(|| Cache::Flatten { in_shape: x.shape.clone() }), None)
            }
        }
    }

    fn backward(&mut self, dy: &Tensor<T>, cache: &Cache<T>) -> Tensor<T> {
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Conv { cols, in_shape }) => c.backward(dy, cols, in_shape),
            (Layer::Dense(d), Cache::Dense { input }) => d.backward(dy, input),
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => {
                bn.backward(dy, xhat, inv_std)
            }
            (Layer::LeakyRelu(slope), Cache::LeakyRelu { input }) => {
                let s = *slope;
                let data = dy
                    .data
                    .iter()
                    .zip(&input.data)
                    .map(|(&g, &x)| if x > T::zero() { g } else { s * g })
                    .collect();
                Tensor {
                    shape: dy.shape.clone(),
                    data,
                }
            }
            (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                let data = dy
                    .data
                    .iter()
                    .zip(&output.data)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                Tensor {
                    shape: dy.shape.clone(),
                    data,
                }
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                dy.clone().reshape(in_shape.clone()).expect("same size")
            }
            _ => unreachable!("cache kind always matches its layer"),
        }
    }

    /// Trainable parameters, in a fixed per-kind order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => vec![],
        }
    }

    pub fn grads(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.grad_weight, &c.grad_bias],
            Layer::Dense(d) => vec![&d.grad_weight, &d.grad_bias],
            Layer::BatchNorm(bn) => vec![&bn.grad_gamma, &bn.grad_beta],
            _ => vec![],
        }
    }

    fn grads_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.grad_weight, &mut c.grad_bias],
            Layer::Dense(d) => vec![&mut d.grad_weight, &mut d.grad_bias],
            Layer::BatchNorm(bn) => vec![&mut bn.grad_gamma, &mut bn.grad_beta],
            _ => vec![],
        }
    }

    fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv2d(c) => vec![(&mut c.weight, &c.grad_weight), (&mut c.bias, &c.grad_bias)],
            Layer::Dense(d) => vec![(&mut d.weight, &d.grad_weight), (&mut d.bias, &d.grad_bias)],
            Layer::BatchNorm(bn) => vec![
                (&mut bn.gamma, &bn.grad_gamma),
                (&mut bn.beta, &bn.grad_beta),
            ],
            _ => vec![],
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                grad_weight: c.grad_weight.cast(),
                grad_bias: c.grad_bias.cast(),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
                grad_weight: d.grad_weight.cast(),
                grad_bias: d.grad_bias.cast(),
            }),
            Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
                features: bn.features,
                gamma: bn.gamma.cast(),
                beta: bn.beta.cast(),
                running_mean: bn.running_mean.cast(),
                running_var: bn.running_var.cast(),
                momentum: U::of(bn.momentum.f64()),
                eps: U::of(bn.eps.f64()),
                grad_gamma: bn.grad_gamma.cast(),
                grad_beta: bn.grad_beta.cast(),
            }),
            Layer::LeakyRelu(s) => Layer::LeakyRelu(U::of(s.f64())),
            Layer::Sigmoid => Layer::Sigmoid,
            Layer::Flatten => Layer::Flatten,
        }
    }
}

/// Per leaky-ReLU layer, whether each input took the identity branch.
pub type ActivationMasks = Vec<Vec<bool>>;

/// An ordered stack of layers with a fixed per-sample input shape.
pub struct NeuralNet<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    mode: Mode,
    caches: Vec<Option<Cache<T>>>,
}

impl<T: Real> Clone for NeuralNet<T> {
    fn clone(&self) -> Self {
        Self {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            mode: self.mode,
            caches: Vec::new(),
        }
    }
}

impl<T: Real> fmt::Debug for NeuralNet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NeuralNet")
            .field("input_shape", &self.input_shape)
            .field(
                "layers",
                &self.layers.iter().map(Layer::kind).collect::<Vec<_>>(),
            )
            .field("mode", &self.mode)
            .finish()
    }
}

impl<T: Real> NeuralNet<T> {
    /// Checks that consecutive layer shapes compose.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|detail| Error::Composition {
                layer: i,
                kind: layer.kind(),
                detail,
            })?;
        }
        Ok(Self {
            input_shape,
            layers,
            mode: Mode::Training,
            caches: Vec::new(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.iter().fold(self.input_shape.clone(), |s, l| {
            l.output_shape(&s).expect("validated at construction")
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.caches.clear();
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.grads()).collect()
    }

    pub fn grads_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.grads_mut()).collect()
    }

    /// Parameters paired with their latest gradients, for optimizer steps.
    pub fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_and_grads_mut())
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.sample_shape() != self.input_shape.as_slice() || x.batch() == 0 {
            return Err(Error::Composition {
                layer: 0,
                kind: self.layers.first().map_or("input", Layer::kind),
                detail: format!(
                    "batch shape {:?} does not match input [B, {:?}]",
                    x.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Evaluates the net without touching caches or running statistics.
    pub fn evaluate(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.pass(x, mode, None)?.0)
    }

    /// Which inputs of each leaky-ReLU layer are positive, in layer order.
    pub fn activation_masks(&self, x: &Tensor<T>, mode: Mode) -> Result<ActivationMasks> {
        Ok(self.pass(x, mode, None)?.1)
    }

    /// Like [`NeuralNet::evaluate`], but every leaky ReLU takes its branch
    /// from `masks` instead of the sign of its input. Near a kink this is
    /// the smooth piece the analytic gradient differentiates.
    pub fn evaluate_masked(&self, x: &Tensor<T>, mode: Mode, masks: &ActivationMasks) -> Result<Tensor<T>> {
        Ok(self.pass(x, mode, Some(masks))?.0)
    }

    fn pass(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        masks: Option<&ActivationMasks>,
    ) -> Result<(Tensor<T>, ActivationMasks)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut seen = Vec::new();
        for layer in &self.layers {
            if let Layer::LeakyRelu(slope) = layer {
                let mask = match masks {
                    Some(m) => m.get(seen.len()).cloned().ok_or_else(|| {
                        Error::arg("fewer activation masks than leaky-ReLU layers")
                    })?,
                    None => cur.data.iter().map(|&v| v > T::zero()).collect(),
                };
                if mask.len() != cur.len() {
                    return Err(Error::arg("activation mask does not match the layer input"));
                }
                for (v, &on) in cur.data.iter_mut().zip(&mask) {
                    if !on {
                        *v = *slope * *v;
                    }
                }
                seen.push(mask);
            } else {
                cur = layer.forward(&cur, mode).0;
            }
        }
        Ok((cur, seen))
    }

    /// Inference-mode evaluation; safe to call concurrently.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.evaluate(x, Mode::Inference)
    }

    /// Forward pass in the current mode. In training mode activations are
    /// cached for [`NeuralNet::backward`] and batch-norm running statistics
    /// are updated.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        self.caches.clear();
        let mut cur = x.clone();
        for layer in self.layers.iter_mut() {
            let (y, cache, stats) = layer.forward(&cur, mode);
            if let (Layer::BatchNorm(bn), Some((m, v))) = (&mut *layer, stats) {
                bn.update_running(&m, &v);
            }
            if mode == Mode::Training {
                self.caches.push(cache);
            }
            cur = y;
        }
        Ok(cur)
    }

    /// Back-propagates `upstream` (gradient w.r.t. the last output). Stores
    /// parameter gradients in the layers and returns the input gradient.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if self.caches.len() != self.layers.len() {
            return Err(Error::State(
                "backward needs a preceding training-mode forward".into(),
            ));
        }
        let caches = std::mem::take(&mut self.caches);
        let mut grad = upstream.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches.iter()).rev() {
            let cache = cache.as_ref().expect("training forward caches every layer");
            grad = layer.backward(&grad, cache);
        }
        Ok(grad)
    }

    pub fn cast<U: Real>(&self) -> NeuralNet<U> {
        NeuralNet {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            mode: self.mode,
            caches: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_net(config: AdamConfig, net: &NeuralNet<T>) -> Self {
        let shapes: Vec<&[usize]> = net.params().iter().map(|p| p.shape()).collect();
        Self::new(config, &shapes)
    }
}

/// One bias-corrected Adam update of `params` given `grads`.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::arg(format!(
            "adam state tracks {} tensors, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::arg(format!(
                "adam shape mismatch: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let corr1 = T::of(1.0 - c.beta1.powi(t));
    let corr2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps, one) = (T::of(c.lr), T::of(c.eps), T::one());
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let mhat = *mv / corr1;
            let vhat = *vv / corr2;
            *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam over every parameter of `net` using its stored gradients.
pub fn adam_step_net<T: Real>(state: &mut AdamState<T>, net: &mut NeuralNet<T>) -> Result<()> {
    let pairs = net.params_and_grads_mut();
    let (mut params, grads): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    adam_step(state, &mut params, &grads)
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter tensor, entry)` of the worst error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative-error floor, as a fraction of the largest numeric gradient.
/// Entries far below the overall gradient scale are compared against this
/// floor instead of their own (noise-dominated) magnitude.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Floor fraction for analytic gradients computed at `bits` precision.
pub fn rel_error_floor(bits: u32) -> f64 {
    if bits >= 64 {
        REL_ERROR_FLOOR
    } else {
        FLOOR_32
    }
}

const FLOOR_32: f64 = 1e-2;

/// Compares analytic gradients against central differences of `loss`
/// evaluated on a 64-bit copy of the parameters. Callers pin leaky-ReLU
/// branches (see [`NeuralNet::evaluate_masked`]) so a perturbation that
/// crosses a kink, or a 32-bit rounding that lands on the other side of
/// one, does not masquerade as a gradient error.
///
/// `analytic` lists gradients in [`NeuralNet::params`] order over the
/// tensors of `parts`. `loss` receives the 64-bit parts with one entry
/// perturbed. With `corrupt` the largest analytic entry is inflated by 10%
/// before comparing (used to check that the checker notices).
pub fn finite_difference_check<F>(
    parts: &mut [NeuralNet<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    floor_fraction: f64,
    corrupt: bool,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[NeuralNet<f64>]) -> Result<f64>,
{
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(analytic.len());
    let mut flat_index = Vec::new();
    for (pi, part) in parts.iter().enumerate() {
        for (ti, p) in part.params().iter().enumerate() {
            flat_index.push((pi, ti));
            numeric.push(vec![0.0; p.len()]);
        }
    }
    if numeric.len() != analytic.len()
        || numeric.iter().zip(analytic).any(|(n, a)| n.len() != a.len())
    {
        return Err(Error::arg("analytic gradients do not match the parameters"));
    }
    for (slot, &(pi, ti)) in flat_index.iter().enumerate() {
        let len = numeric[slot].len();
        for i in 0..len {
            let orig = parts[pi].params()[ti].data[i];
            parts[pi].params_mut()[ti].data[i] = orig + eps;
            let up = loss(parts)?;
            parts[pi].params_mut()[ti].data[i] = orig - eps;
            let down = loss(parts)?;
            parts[pi].params_mut()[ti].data[i] = orig;
            numeric[slot][i] = (up - down) / (2.0 * eps);
        }
    }

    let mut analytic = analytic.to_vec();
    if corrupt {
        let (mut best, mut where_) = (0.0, (0, 0));
        for (t, g) in analytic.iter().enumerate() {
            for (i, v) in g.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    where_ = (t, i);
                }
            }
        }
        analytic[where_.0][where_.1] *= 1.1;
    }

    let scale = numeric
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * floor_fraction).max(1e-12);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (t, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (i, (&av, &nv)) in a.iter().zip(n).enumerate() {
            let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst = (t, i);
            }
        }
    }
    Ok(report)
}

/// Fixed random projection used to turn a net output into a scalar.
fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_tensor(shape, 1.0, &mut rng)
}

/// Gradient check of `net` on `input` for the scalar `sum(out * R)` with a
/// fixed random `R`. Returns the worst relative error over all parameters.
pub fn grad_check<T: Real>(net: &mut NeuralNet<T>, input: &Tensor<T>, eps: f64) -> Result<GradCheckReport> {
    grad_check_with(net, input, eps, false)
}

pub fn grad_check_with<T: Real>(
    net: &mut NeuralNet<T>,
    input: &Tensor<T>,
    eps: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let saved_mode = net.mode();
    net.set_mode(Mode::Training);
    let out = net.forward(input)?;
    let r = projection(out.shape(), 0x5eed);
    net.backward(&r.cast())?;
    let analytic: Vec<Vec<f64>> = net
        .grads()
        .iter()
        .map(|g| g.data.iter().map(|v| v.f64()).collect())
        .collect();
    let masks = net.activation_masks(input, Mode::Training)?;
    net.set_mode(saved_mode);

    let x64: Tensor<f64> = input.cast();
    let mut parts = vec![net.cast::<f64>()];
    finite_difference_check(&mut parts, &analytic, eps, rel_error_floor(T::BITS), corrupt, |nets| {
        let y = nets[0].evaluate_masked(&x64, Mode::Training, &masks)?;
        Ok(y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum())
    })
}

/// Magic of the network container.
pub const MNET_MAGIC: &[u8; 4] = b"MNET";
pub const MNET_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_DENSE: u8 = 1;
const KIND_BATCHNORM: u8 = 2;
const KIND_LEAKY_RELU: u8 = 3;
const KIND_SIGMOID: u8 = 4;
const KIND_FLATTEN: u8 = 5;

/// Serializes one or more nets into an `MNET` container.
///
/// Layout (little-endian): magic, `u32` version, `u32` net count; per net
/// the input rank and dims (`u32`), the layer count, then per layer a kind
/// byte, its hyperparameters (`u32` sizes, `f64` scalars) and its tensors
/// as `u32` length plus `f64` values. Batch-norm layers store gamma, beta,
/// running mean and running variance.
pub fn nets_to_bytes<T: Real>(nets: &[&NeuralNet<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    let u32_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f64_ = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    let tensor = |out: &mut Vec<u8>, t: &Tensor<T>| {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.f64().to_le_bytes());
        }
    };
    out.extend_from_slice(MNET_MAGIC);
    u32_(&mut out, MNET_VERSION as usize);
    u32_(&mut out, nets.len());
    for net in nets {
        u32_(&mut out, net.input_shape.len());
        for &d in &net.input_shape {
            u32_(&mut out, d);
        }
        u32_(&mut out, net.layers.len());
        for layer in &net.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(KIND_CONV);
                    for v in [c.in_channels, c.out_channels, c.kernel, c.stride, c.padding] {
                        u32_(&mut out, v);
                    }
                    u32_(&mut out, 2);
                    tensor(&mut out, &c.weight);
                    tensor(&mut out, &c.bias);
                }
                Layer::Dense(d) => {
                    out.push(KIND_DENSE);
                    u32_(&mut out, d.inputs);
                    u32_(&mut out, d.outputs);
                    u32_(&mut out, 2);
                    tensor(&mut out, &d.weight);
                    tensor(&mut out, &d.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.push(KIND_BATCHNORM);
                    u32_(&mut out, bn.features);
                    f64_(&mut out, bn.momentum.f64());
                    f64_(&mut out, bn.eps.f64());
                    u32_(&mut out, 4);
                    for t in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        tensor(&mut out, t);
                    }
                }
                Layer::LeakyRelu(s) => {
                    out.push(KIND_LEAKY_RELU);
                    f64_(&mut out, s.f64());
                    u32_(&mut out, 0);
                }
                Layer::Sigmoid => {
                    out.push(KIND_SIGMOID);
                    u32_(&mut out, 0);
                }
                Layer::Flatten => {
                    out.push(KIND_FLATTEN);
                    u32_(&mut out, 0);
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Length {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor<T: Real>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let len = self.u32()?;
        let want: usize = shape.iter().product();
        if len != want {
            return Err(Error::Format(format!(
                "tensor of shape {shape:?} stored with {len} values"
            )));
        }
        let data = (0..len)
            .map(|_| self.f64().map(T::of))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(shape.to_vec(), data)
    }

    fn tensor_count(&mut self, want: usize) -> Result<()> {
        let n = self.u32()?;
        if n != want {
            return Err(Error::Format(format!("expected {want} tensors, found {n}")));
        }
        Ok(())
    }
}

/// Reads every net stored in an `MNET` container.
pub fn nets_from_bytes<T: Real>(bytes: &[u8]) -> Result<Vec<NeuralNet<T>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MNET_MAGIC {
        return Err(Error::Format("not an MNET container".into()));
    }
    let version = r.u32()?;
    if version != MNET_VERSION as usize {
        return Err(Error::Format(format!("unsupported MNET version {version}")));
    }
    let count = r.u32()?;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()?;
        let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_layers = r.u32()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let layer = match r.u8()? {
                KIND_CONV => {
                    let (ic, oc, k, s, p) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                    r.tensor_count(2)?;
                    let wshape = [oc, ic, k, k];
                    Layer::Conv2d(Conv2d {
                        in_channels: ic,
                        out_channels: oc,
                        kernel: k,
                        stride: s.max(1),
                        padding: p,
                        weight: r.tensor(&wshape)?,
                        bias: r.tensor(&[oc])?,
                        grad_weight: Tensor::zeros(&wshape),
                        grad_bias: Tensor::zeros(&[oc]),
                    })
                }
                KIND_DENSE => {
                    let (i, o) = (r.u32()?, r.u32()?);
                    r.tensor_count(2)?;
                    let mut d = Dense::with_weight(i, o, r.tensor(&[i, o])?);
                    d.bias = r.tensor(&[o])?;
                    Layer::Dense(d)
                }
                KIND_BATCHNORM => {
                    let f = r.u32()?;
                    let (momentum, eps) = (r.f64()?, r.f64()?);
                    r.tensor_count(4)?;
                    let mut bn = BatchNorm::new(f, momentum, eps);
                    bn.gamma = r.tensor(&[f])?;
                    bn.beta = r.tensor(&[f])?;
                    bn.running_mean = r.tensor(&[f])?;
                    bn.running_var = r.tensor(&[f])?;
                    Layer::BatchNorm(bn)
                }
                KIND_LEAKY_RELU => {
                    let s = r.f64()?;
                    r.tensor_count(0)?;
                    Layer::LeakyRelu(T::of(s))
                }
                KIND_SIGMOID => {
                    r.tensor_count(0)?;
                    Layer::Sigmoid
                }
                KIND_FLATTEN => {
                    r.tensor_count(0)?;
                    Layer::Flatten
                }
                other => return Err(Error::Format(format!("unknown layer kind {other}"))),
            };
            layers.push(layer);
        }
        nets.push(NeuralNet::new(input_shape, layers).map_err(|e| Error::Format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after MNET payload",
            bytes.len() - r.pos
        )));
    }
    Ok(nets)
}

impl<T: Real> NeuralNet<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), &nets_to_bytes(&[self]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut nets = nets_from_bytes(&bytes)?;
        if nets.len() != 1 {
            return Err(Error::Format(format!(
                "expected a single net, container holds {}",
                nets.len()
            )));
        }
        Ok(nets.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        uniform_tensor(shape, 1.0, &mut r)
    }

    #[test]
    fn empty_net_is_identity() {
        let mut net = NeuralNet::<f64>::new(vec![3], vec![]).unwrap();
        let x = random_input(&[2, 3], 1);
        assert_eq!(net.forward(&x).unwrap(), x);
        let g = random_input(&[2, 3], 2);
        assert_eq!(net.backward(&g).unwrap(), g);
    }

    #[test]
    fn leaky_relu_values() {
        let net = NeuralNet::new(vec![3], vec![Layer::LeakyRelu(0.1f64)]).unwrap();
        let x = Tensor::new(vec![1, 3], vec![-2.0, 0.0, 3.0]).unwrap();
        let y = net.infer(&x).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(&y.data()[1..], &[0.0, 3.0]);

        let id = NeuralNet::new(vec![3], vec![Layer::LeakyRelu(1.0f64)]).unwrap();
        assert_eq!(id.infer(&x).unwrap(), x);
        let relu = NeuralNet::new(vec![3], vec![Layer::LeakyRelu(0.0f64)]).unwrap();
        assert_eq!(relu.infer(&x).unwrap().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn conv_stamps_kernel_at_hot_pixel() {
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 1, &mut rng());
        let kernel: Vec<f64> = (1..=9).map(f64::from).collect();
        conv.weight.data_mut().copy_from_slice(&kernel);
        let net = NeuralNet::new(vec![1, 5, 5], vec![Layer::Conv2d(conv)]).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let y = net.infer(&x).unwrap();
        // cross-correlation: out(p) = sum_k w(k) x(p + k - 1), so the hot
        // pixel reads the kernel back flipped around its centre
        for r in 0..5 {
            for c in 0..5 {
                let want = if (1..=3).contains(&r) && (1..=3).contains(&c) {
                    kernel[(2 - (r - 1)) * 3 + (2 - (c - 1))]
                } else {
                    0.0
                };
                assert_eq!(y.data()[r * 5 + c], want, "({r},{c})");
            }
        }
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let d = Dense::<f64>::new(3, 2, &mut rng());
        let mut net = NeuralNet::new(vec![3], vec![Layer::Dense(d)]).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        net.forward(&x).unwrap();
        let up = Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap();
        net.backward(&up).unwrap();
        let gw = net.grads()[0].data().to_vec();
        let want: Vec<f64> = [1.0, -2.0, 0.5]
            .iter()
            .flat_map(|a| [0.3, -1.0].map(|b| a * b))
            .collect();
        assert_eq!(gw, want);
        assert_eq!(net.grads()[1].data(), &[0.3, -1.0]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = NeuralNet::new(vec![2], vec![Layer::<f64>::Sigmoid]).unwrap();
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
        net.set_mode(Mode::Inference);
        net.forward(&g).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn composition_errors_name_the_layer() {
        let d = Dense::<f64>::new(4, 2, &mut rng());
        let err = NeuralNet::new(vec![3], vec![Layer::Sigmoid, Layer::Dense(d)]).unwrap_err();
        assert!(matches!(err, Error::Composition { layer: 1, kind: "dense", .. }));
        let net = NeuralNet::new(vec![3], vec![Layer::<f64>::Sigmoid]).unwrap();
        assert!(matches!(
            net.infer(&Tensor::zeros(&[2, 4])),
            Err(Error::Composition { .. })
        ));
    }

    #[test]
    fn batchnorm_normalizes_in_training() {
        let bn = BatchNorm::<f64>::new(3, 0.9, 1e-5);
        let mut net = NeuralNet::new(vec![3, 2, 2], vec![Layer::BatchNorm(bn)]).unwrap();
        let x = random_input(&[5, 3, 2, 2], 4).map(|v| 3.0 * v + 1.5);
        let y = net.forward(&x).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|b| y.data()[(b * 3 + c) * 4..][..4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        if let Layer::BatchNorm(bn) = &net.layers()[0] {
            assert!(bn.running_mean.data().iter().all(|&m| m != 0.0));
        }
    }

    #[test]
    fn inference_is_batch_order_independent() {
        let mut r = rng();
        let layers = vec![
            Layer::Dense(Dense::<f64>::new(4, 3, &mut r)),
            Layer::BatchNorm(BatchNorm::new(3, 0.9, 1e-5)),
            Layer::LeakyRelu(0.1),
        ];
        let net = NeuralNet::new(vec![4], layers).unwrap();
        let x = random_input(&[3, 4], 9);
        let y = net.infer(&x).unwrap();
        let mut swapped = x.clone();
        swapped.data_mut()[..4].copy_from_slice(&x.data()[8..]);
        swapped.data_mut()[8..].copy_from_slice(&x.data()[..4]);
        let ys = net.infer(&swapped).unwrap();
        assert_eq!(&y.data()[..3], &ys.data()[6..]);
        assert_eq!(&y.data()[3..6], &ys.data()[3..6]);
        assert_eq!(net.infer(&x).unwrap(), y);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(AdamConfig::default(), &[&[3]]);
        let before = p.clone();
        adam_step(&mut st, &mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::new(vec![2], vec![1.0f64, 1.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.37, -4.0]).unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &[&[2]]);
        adam_step(&mut st, &mut [&mut p], &[&g]).unwrap();
        // m_hat = g, v_hat = g^2: step = lr * g / (|g| + eps)
        let want0 = 1.0 - 1e-3 * 0.37 / (0.37 + 1e-8);
        let want1 = 1.0 + 1e-3 * 4.0 / (4.0 + 1e-8);
        assert!((p.data()[0] - want0).abs() < 1e-15);
        assert!((p.data()[1] - want1).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = Tensor::new(vec![2], vec![0.1f64, 0.2]).unwrap();
            let g = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
            let mut st = AdamState::new(AdamConfig::default(), &[&[2]]);
            adam_step(&mut st, &mut [&mut p], &[&g]).unwrap();
            adam_step(&mut st, &mut [&mut p], &[&g]).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(AdamConfig::default(), &[&[2]]);
        assert!(adam_step(&mut st, &mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn linear_net_grad_check_is_exact() {
        let d = Dense::<f64>::new(5, 3, &mut rng());
        let mut net = NeuralNet::new(vec![5], vec![Layer::Dense(d)]).unwrap();
        let x = random_input(&[4, 5], 3);
        // central differences are exact for a linear map, so a wide step
        // only removes cancellation noise
        let rep = grad_check(&mut net, &x, 1e-3).unwrap();
        assert!(rep.max_rel_error <= 1e-9, "{rep:?}");
        assert_eq!(rep.checked, 5 * 3 + 3);
    }

    #[test]
    fn every_layer_kind_passes_grad_check() {
        let mut r = rng();
        let cases: Vec<(Vec<usize>, Vec<Layer<f64>>)> = vec![
            (vec![2, 6, 6], vec![Layer::Conv2d(Conv2d::new(2, 3, 4, 2, 1, &mut r))]),
            (vec![2, 5, 5], vec![Layer::Conv2d(Conv2d::new(2, 2, 3, 1, 0, &mut r))]),
            (vec![6], vec![Layer::Dense(Dense::new(6, 4, &mut r))]),
            (
                vec![3, 2, 2],
                vec![
                    Layer::Conv2d(Conv2d::new(3, 2, 1, 1, 0, &mut r)),
                    Layer::BatchNorm(BatchNorm::new(2, 0.9, 1e-5)),
                ],
            ),
            (
                vec![4],
                vec![
                    Layer::Dense(Dense::new(4, 5, &mut r)),
                    Layer::BatchNorm(BatchNorm::new(5, 0.9, 1e-5)),
                ],
            ),
            (
                vec![4],
                vec![Layer::Dense(Dense::new(4, 4, &mut r)), Layer::LeakyRelu(0.1)],
            ),
            (
                vec![4],
                vec![Layer::Dense(Dense::new(4, 3, &mut r)), Layer::Sigmoid],
            ),
            (
                vec![1, 4, 4],
                vec![
                    Layer::Conv2d(Conv2d::new(1, 2, 2, 2, 0, &mut r)),
                    Layer::Flatten,
                    Layer::Dense(Dense::new(8, 2, &mut r)),
                ],
            ),
        ];
        for (i, (shape, layers)) in cases.into_iter().enumerate() {
            let mut net = NeuralNet::new(shape.clone(), layers).unwrap();
            let mut bshape = vec![3];
            bshape.extend(shape);
            let x = random_input(&bshape, 100 + i as u64);
            let rep = grad_check(&mut net, &x, 1e-6).unwrap();
            assert!(rep.max_rel_error <= 1e-5, "case {i}: {rep:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let d = Dense::<f64>::new(5, 3, &mut rng());
        let mut net = NeuralNet::new(vec![5], vec![Layer::Dense(d), Layer::Sigmoid]).unwrap();
        let x = random_input(&[4, 5], 3);
        let rep = grad_check_with(&mut net, &x, 1e-6, true).unwrap();
        assert!(rep.max_rel_error > 1e-2, "{rep:?}");
    }

    #[test]
    fn container_round_trip() {
        let mut r = rng();
        let layers = vec![
            Layer::Conv2d(Conv2d::<f64>::new(1, 2, 3, 2, 1, &mut r)),
            Layer::BatchNorm(BatchNorm::new(2, 0.9, 1e-5)),
            Layer::LeakyRelu(0.1),
            Layer::Flatten,
            Layer::Dense(Dense::new(8, 3, &mut r)),
            Layer::Sigmoid,
        ];
        let net = NeuralNet::new(vec![1, 4, 4], layers).unwrap();
        let bytes = nets_to_bytes(&[&net]);
        let back: Vec<NeuralNet<f64>> = nets_from_bytes(&bytes).unwrap();
        assert_eq!(back[0].layers(), net.layers());
        assert_eq!(back[0].input_shape(), net.input_shape());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(nets_from_bytes::<f64>(&bad), Err(Error::Format(_))));
        assert!(nets_from_bytes::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}

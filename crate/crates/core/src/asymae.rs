//! Asymmetric auto-encoder: a deep convolutional encoder paired with a
//! single non-negative dense decoder layer whose weight rows are the atoms.
//!
//! Training minimizes the per-pixel MSE plus `beta` times a Bernoulli KL
//! penalty that drives the mean activation of each latent unit toward `p`.
//! After every Adam step the decoder weights are clamped to the positive
//! orthant, so non-negativity is exact rather than encouraged.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{plan_batches, GrayImage, ImageSet};
use crate::error::{Error, Result};
use crate::morphology::Dictionary;
use crate::neuralnet::{
    adam_step_net, finite_difference_check, nets_from_bytes, nets_to_bytes, AdamConfig, AdamState,
    BatchNorm, Conv2d, Dense, GradCheckReport, Layer, rel_error_floor, Mode, NeuralNet, Real, Tensor,
};

/// Activation means are clamped to `[T_CLAMP, 1 - T_CLAMP]` in the penalty.
pub const T_CLAMP: f64 = 1e-6;
/// Rows per forward pass when encoding or decoding large sets.
const INFER_CHUNK: usize = 256;

/// Floating point width used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be 32 or 64, got {s:?}"))),
        }
    }
}

/// Channel and unit counts of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderWidths {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl EncoderWidths {
    /// The full-size encoder.
    pub const STANDARD: Self = Self {
        conv1: 64,
        conv2: 128,
        hidden: 1024,
    };
    /// A miniature with the same topology, for gradient checks.
    pub const TINY: Self = Self {
        conv1: 3,
        conv2: 4,
        hidden: 6,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymAeConfig {
    pub k: usize,
    pub p: f64,
    pub beta: f64,
    pub alpha_lrelu: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Stop when the train loss improved by less than 0.1% over 5 epochs.
    pub early_stop: bool,
    pub widths: EncoderWidths,
}

impl Default for AsymAeConfig {
    fn default() -> Self {
        Self {
            k: 100,
            p: 0.05,
            beta: 0.001,
            alpha_lrelu: 0.1,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            precision: Precision::F64,
            early_stop: true,
            widths: EncoderWidths::STANDARD,
        }
    }
}

impl AsymAeConfig {
    /// Sparsity weight used for a named dataset: 0.0005 for Fashion-MNIST,
    /// 0.001 otherwise.
    pub fn default_beta(dataset: &str) -> f64 {
        if dataset.to_ascii_lowercase().contains("fashion") {
            0.0005
        } else {
            0.001
        }
    }

    /// Gradient-check variant: 8×8 inputs, `k = 4`, narrow encoder.
    pub fn tiny() -> Self {
        Self {
            k: 4,
            widths: EncoderWidths::TINY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.alpha_lrelu.is_finite() {
            return Err(Error::Config("alpha_lrelu must be finite".into()));
        }
        Ok(())
    }
}

/// Encoder plus non-negative decoder.
#[derive(Debug, Clone)]
pub struct AsymAeModel<T: Real = f64> {
    pub encoder: NeuralNet<T>,
    /// `Dense(k -> N)` followed by a leaky ReLU.
    pub decoder: NeuralNet<T>,
    height: usize,
    width: usize,
}

/// Builds the encoder/decoder pair for `height × width` images.
pub fn build_model<T: Real>(cfg: &AsymAeConfig, height: usize, width: usize) -> Result<AsymAeModel<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.widths;
    let a = T::of(cfg.alpha_lrelu);
    let conv1 = Conv2d::new(1, w.conv1, 4, 2, 1, &mut rng);
    let conv2 = Conv2d::new(w.conv1, w.conv2, 4, 2, 1, &mut rng);
    let too_small = || {
        Error::Config(format!(
            "{height}x{width} images are too small for the encoder (need at least 4x4)"
        ))
    };
    let s1 = Layer::Conv2d(conv1.clone())
        .output_shape(&[1, height, width])
        .map_err(|_| too_small())?;
    let s2 = Layer::Conv2d(conv2.clone())
        .output_shape(&s1)
        .map_err(|_| too_small())?;
    let flat = s2.iter().product();
    let encoder = NeuralNet::new(
        vec![1, height, width],
        vec![
            Layer::Conv2d(conv1),
            Layer::LeakyRelu(a),
            Layer::Conv2d(conv2),
            Layer::BatchNorm(BatchNorm::new(w.conv2, 0.9, 1e-5)),
            Layer::LeakyRelu(a),
            Layer::Flatten,
            Layer::Dense(Dense::new(flat, w.hidden, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(w.hidden, 0.9, 1e-5)),
            Layer::LeakyRelu(a),
            Layer::Dense(Dense::new(w.hidden, cfg.k, &mut rng)),
            Layer::Sigmoid,
        ],
    )?;

    let n = height * width;
    let bound = (6.0 / (cfg.k + n) as f64).sqrt();
    let weight = Tensor::new(
        vec![cfg.k, n],
        (0..cfg.k * n)
            .map(|_| T::of(rng.gen_range(-bound..bound)).abs())
            .collect(),
    )?;
    let decoder = NeuralNet::new(
        vec![cfg.k],
        vec![Layer::Dense(Dense::with_weight(cfg.k, n, weight)), Layer::LeakyRelu(a)],
    )?;
    let mut model = AsymAeModel {
        encoder,
        decoder,
        height,
        width,
    };
    model.project_decoder();
    Ok(model)
}

/// `Σ_j KL(p ‖ t_j)` with `t_j` the clamped batch-mean activation of unit j.
pub fn sparsity_penalty(codes: &Array2<f64>, p: f64) -> f64 {
    mean_activations(codes)
        .iter()
        .map(|&t| bernoulli_kl(p, t.clamp(T_CLAMP, 1.0 - T_CLAMP)))
        .sum()
}

fn mean_activations(codes: &Array2<f64>) -> Vec<f64> {
    let m = codes.nrows().max(1) as f64;
    codes.columns().into_iter().map(|c| c.sum() / m).collect()
}

fn bernoulli_kl(p: f64, t: f64) -> f64 {
    p * (p / t).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - t)).ln()
}

/// Loss split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub penalty: f64,
}

fn mean_squared_error<T: Real>(out: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let n = out.len() as f64;
    out.data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = (a - b).f64();
            d * d
        })
        .sum::<f64>()
        / n
}

fn codes_matrix<T: Real>(codes: &Tensor<T>) -> Array2<f64> {
    codes.as_matrix().mapv(|v| v.f64())
}

fn combine(mse: f64, penalty: f64, beta: f64) -> LossParts {
    LossParts {
        total: mse + beta * penalty,
        mse,
        penalty,
    }
}

impl<T: Real> AsymAeModel<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.decoder_dense().inputs
    }

    pub fn decoder_dense(&self) -> &Dense<T> {
        match &self.decoder.layers()[0] {
            Layer::Dense(d) => d,
            _ => unreachable!("decoder starts with its dense layer"),
        }
    }

    fn decoder_dense_mut(&mut self) -> &mut Dense<T> {
        match &mut self.decoder.layers_mut()[0] {
            Layer::Dense(d) => d,
            _ => unreachable!("decoder starts with its dense layer"),
        }
    }

    /// Clamps every decoder weight to `>= 0`.
    pub fn project_decoder(&mut self) {
        for w in self.decoder_dense_mut().weight.data_mut() {
            if !(*w >= T::zero()) {
                *w = T::zero();
            }
        }
    }

    pub fn min_decoder_weight(&self) -> f64 {
        self.decoder_dense()
            .weight
            .data()
            .iter()
            .fold(f64::INFINITY, |m, w| m.min(w.f64()))
    }

    /// Packs images into a `[B, 1, H, W]` tensor.
    pub fn batch_tensor(&self, images: &[&GrayImage]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(images.len() * self.height * self.width);
        for img in images {
            if img.height() != self.height || img.width() != self.width {
                return Err(Error::arg(format!(
                    "model expects {}x{} images, got {}x{}",
                    self.height,
                    self.width,
                    img.height(),
                    img.width()
                )));
            }
            data.extend(img.pixels().iter().map(|&v| T::of(v)));
        }
        Tensor::new(vec![images.len(), 1, self.height, self.width], data)
    }

    /// Loss of one batch; training mode uses batch statistics (without
    /// updating them), inference mode the running statistics.
    pub fn loss(&self, images: &[&GrayImage], beta: f64, p: f64, mode: Mode) -> Result<LossParts> {
        let x = self.batch_tensor(images)?;
        let codes = self.encoder.evaluate(&x, mode)?;
        let out = self.decoder.evaluate(&codes, mode)?;
        let target = x.reshape(vec![images.len(), self.height * self.width])?;
        let mse = mean_squared_error(&out, &target);
        Ok(combine(mse, sparsity_penalty(&codes_matrix(&codes), p), beta))
    }

    /// One forward/backward pass in training mode. Leaves gradients in
    /// both nets and returns the batch loss.
    pub fn forward_backward(&mut self, x: &Tensor<T>, beta: f64, p: f64) -> Result<LossParts> {
        self.encoder.set_mode(Mode::Training);
        self.decoder.set_mode(Mode::Training);
        let b = x.batch();
        let n = self.height * self.width;
        let codes = self.encoder.forward(x)?;
        let out = self.decoder.forward(&codes)?;

        let scale = T::of(2.0 / (b * n) as f64);
        let mut d_out = Tensor::zeros(out.shape());
        for ((d, &y), &t) in d_out.data_mut().iter_mut().zip(out.data()).zip(x.data()) {
            *d = scale * (y - t);
        }
        let target = Tensor::new(vec![b, n], x.data().to_vec())?;
        let mse = mean_squared_error(&out, &target);

        let cm = codes_matrix(&codes);
        let penalty = sparsity_penalty(&cm, p);
        let mut d_codes = self.decoder.backward(&d_out)?;
        if beta != 0.0 {
            let k = cm.ncols();
            let dt: Vec<T> = mean_activations(&cm)
                .iter()
                .map(|&t| {
                    if t < T_CLAMP || t > 1.0 - T_CLAMP {
                        T::zero()
                    } else {
                        T::of(beta * (-p / t + (1.0 - p) / (1.0 - t)) / b as f64)
                    }
                })
                .collect();
            for (i, d) in d_codes.data_mut().iter_mut().enumerate() {
                *d = *d + dt[i % k];
            }
        }
        self.encoder.backward(&d_codes)?;
        Ok(combine(mse, penalty, beta))
    }

    /// Codes for every image, `M × k`, in inference mode.
    pub fn encode(&self, images: &[GrayImage]) -> Result<Array2<f64>> {
        let mut codes = Array2::zeros((images.len(), self.k()));
        for (ci, chunk) in images.chunks(INFER_CHUNK).enumerate() {
            let refs: Vec<&GrayImage> = chunk.iter().collect();
            let h = self.encoder.infer(&self.batch_tensor(&refs)?)?;
            let start = ci * INFER_CHUNK;
            for (r, row) in h.as_matrix().rows().into_iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    codes[[start + r, c]] = v.f64();
                }
            }
        }
        Ok(codes)
    }

    /// `leaky_relu(b + h W)` for every row of `codes`, unclipped.
    pub fn decode_matrix(&self, codes: &Array2<f64>) -> Result<Array2<f64>> {
        if codes.ncols() != self.k() {
            return Err(Error::arg(format!(
                "codes have length {}, model has k = {}",
                codes.ncols(),
                self.k()
            )));
        }
        let n = self.height * self.width;
        let mut out = Array2::zeros((codes.nrows(), n));
        for start in (0..codes.nrows()).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(codes.nrows());
            let block = codes.slice(ndarray::s![start..end, ..]);
            let t = Tensor::new(
                vec![end - start, self.k()],
                block.iter().map(|&v| T::of(v)).collect(),
            )?;
            let y = self.decoder.infer(&t)?;
            for (r, row) in y.as_matrix().rows().into_iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    out[[start + r, c]] = v.f64();
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, codes: &Array2<f64>) -> Result<Vec<GrayImage>> {
        let m = self.decode_matrix(codes)?;
        m.rows()
            .into_iter()
            .map(|r| GrayImage::new(self.height, self.width, r.to_vec()))
            .collect()
    }

    /// Decoder weight rows as images.
    pub fn atoms(&self) -> Result<Dictionary> {
        let d = self.decoder_dense();
        let w = Array2::from_shape_vec(
            (d.inputs, d.outputs),
            d.weight.data().iter().map(|v| v.f64()).collect(),
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        Dictionary::from_matrix(self.height, self.width, w)
    }

    pub fn cast<U: Real>(&self) -> AsymAeModel<U> {
        AsymAeModel {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            height: self.height,
            width: self.width,
        }
    }

    /// Writes encoder and decoder as a two-net `MNET` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        nets_to_bytes(&[&self.encoder, &self.decoder])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut nets = nets_from_bytes::<T>(bytes)?;
        if nets.len() != 2 {
            return Err(Error::Format(format!(
                "auto-encoder checkpoint needs 2 nets, found {}",
                nets.len()
            )));
        }
        let decoder = nets.pop().expect("two nets");
        let encoder = nets.pop().expect("two nets");
        let (height, width) = match encoder.input_shape() {
            [1, h, w] => (*h, *w),
            other => {
                return Err(Error::Format(format!(
                    "encoder input {other:?} is not a single-channel image"
                )))
            }
        };
        let dense_ok = matches!(decoder.layers().first(), Some(Layer::Dense(d))
            if d.outputs == height * width && encoder.output_shape() == [d.inputs]);
        if !dense_ok {
            return Err(Error::Format("decoder does not match the encoder".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            height,
            width,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub mse: f64,
    pub penalty: f64,
}

/// What the training observer is told about.
#[derive(Debug, Clone, Copy)]
pub enum TrainEvent {
    /// After an optimizer step and the decoder projection that follows it.
    Step { epoch: usize, step: u64, loss: LossParts },
    /// After an epoch, with its mean losses.
    Epoch(EpochRecord),
}

/// Header of the training trace CSV.
pub const TRACE_HEADER: [&str; 4] = ["epoch", "total", "mse", "penalty"];

pub fn trace_to_csv(trace: &[EpochRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(TRACE_HEADER).map_err(err)?;
    for r in trace {
        w.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.total),
            format!("{:e}", r.mse),
            format!("{:e}", r.penalty),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Trains `model` in place and returns the per-epoch trace.
pub fn train<T: Real>(
    model: &mut AsymAeModel<T>,
    set: &ImageSet,
    cfg: &AsymAeConfig,
) -> Result<Vec<EpochRecord>> {
    train_with(model, set, cfg, |_, _| Ok(()))
}

/// [`train`] with an observer called after every step and every epoch.
/// An error returned by the observer aborts training.
pub fn train_with<T: Real, F>(
    model: &mut AsymAeModel<T>,
    set: &ImageSet,
    cfg: &AsymAeConfig,
    mut observe: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&AsymAeModel<T>, TrainEvent) -> Result<()>,
{
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::arg("cannot train on an empty image set"));
    }
    if set.height() != model.height || set.width() != model.width {
        return Err(Error::arg(format!(
            "model expects {}x{} images, set has {}x{}",
            model.height,
            model.width,
            set.height(),
            set.width()
        )));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut enc_state = AdamState::for_net(adam, &model.encoder);
    let mut dec_state = AdamState::for_net(adam, &model.decoder);
    let mut trace: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let plan = plan_batches(set.len(), cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        let (mut tot, mut mse, mut pen, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for batch in plan.batches() {
            let imgs: Vec<&GrayImage> = batch.iter().map(|&i| &set.images()[i]).collect();
            let x = model.batch_tensor(&imgs)?;
            let loss = model.forward_backward(&x, cfg.beta, cfg.p)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {} (mse {}, penalty {}); \
                     the learning rate {} is probably too high",
                    step + 1,
                    loss.mse,
                    loss.penalty,
                    cfg.lr
                )));
            }
            adam_step_net(&mut enc_state, &mut model.encoder)?;
            adam_step_net(&mut dec_state, &mut model.decoder)?;
            model.project_decoder();
            step += 1;
            observe(model, TrainEvent::Step { epoch, step, loss })?;
            let w = batch.len() as f64;
            tot += loss.total * w;
            mse += loss.mse * w;
            pen += loss.penalty * w;
            seen += batch.len();
        }
        let n = seen as f64;
        let record = EpochRecord {
            epoch,
            total: tot / n,
            mse: mse / n,
            penalty: pen / n,
        };
        trace.push(record);
        observe(model, TrainEvent::Epoch(record))?;
        if cfg.early_stop && trace.len() > 5 {
            let old = trace[trace.len() - 6].total;
            let new = trace[trace.len() - 1].total;
            if old - new < 1e-3 * old.abs() {
                break;
            }
        }
    }
    model.encoder.set_mode(Mode::Inference);
    model.decoder.set_mode(Mode::Inference);
    Ok(trace)
}

/// Finite-difference step for [`model_grad_check`]: the whole-model loss
/// stacks enough operations that at 1e-6 cancellation noise starts to
/// dominate; 1e-5 balances it against truncation error.
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Images per gradient check. With only two samples every batch-normalized
/// feature is ±1 up to the variance epsilon, and the gradient through it is
/// pure cancellation.
pub const GRAD_CHECK_BATCH: usize = 4;

/// Compares the analytic gradient of the full training loss (MSE plus
/// weighted penalty) against central differences, over every parameter of
/// both nets. Differences are always taken in 64-bit arithmetic, with the
/// leaky-ReLU branches pinned to those of the analytic pass.
pub fn model_grad_check<T: Real>(
    model: &mut AsymAeModel<T>,
    images: &[GrayImage],
    beta: f64,
    p: f64,
    eps: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let refs: Vec<&GrayImage> = images.iter().collect();
    let x = model.batch_tensor(&refs)?;
    model.forward_backward(&x, beta, p)?;
    let analytic: Vec<Vec<f64>> = model
        .encoder
        .grads()
        .into_iter()
        .chain(model.decoder.grads())
        .map(|g| g.data().iter().map(|v| v.f64()).collect())
        .collect();
    let enc_masks = model.encoder.activation_masks(&x, Mode::Training)?;
    let codes = model.encoder.evaluate(&x, Mode::Training)?;
    let dec_masks = model.decoder.activation_masks(&codes, Mode::Training)?;

    let x64: Tensor<f64> = x.cast();
    let target = Tensor::new(vec![images.len(), model.height * model.width], x64.data().to_vec())?;
    let mut parts = vec![model.encoder.cast::<f64>(), model.decoder.cast::<f64>()];
    finite_difference_check(&mut parts, &analytic, eps, rel_error_floor(T::BITS), corrupt, |nets| {
        let h = nets[0].evaluate_masked(&x64, Mode::Training, &enc_masks)?;
        let out = nets[1].evaluate_masked(&h, Mode::Training, &dec_masks)?;
        let mse = mean_squared_error(&out, &target);
        Ok(mse + beta * sparsity_penalty(&codes_matrix(&h), p))
    })
}

/// Deterministic images in `[0, 1]` for checks and demos.
pub fn random_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let px = (0..height * width).map(|_| rng.gen::<f64>()).collect();
            GrayImage::new(height, width, px).expect("valid pixels")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AsymAeModel<f64> {
        build_model(&AsymAeConfig::tiny(), 8, 8).unwrap()
    }

    #[test]
    fn standard_model_shapes() {
        let m: AsymAeModel<f64> = build_model(&AsymAeConfig::default(), 28, 28).unwrap();
        assert_eq!(m.decoder_dense().weight.shape(), &[100, 784]);
        assert_eq!(m.encoder.output_shape(), vec![100]);
        assert!(m.min_decoder_weight() >= 0.0);
    }

    #[test]
    fn too_small_images_are_rejected() {
        let err = build_model::<f64>(&AsymAeConfig::tiny(), 3, 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn zero_batch_gives_codes_in_unit_interval() {
        let m = tiny();
        let zeros = vec![GrayImage::zeros(8, 8); 3];
        let h = m.encode(&zeros).unwrap();
        assert_eq!(h.dim(), (3, 4));
        assert!(h.iter().all(|&v| v > 0.0 && v < 1.0));
        let out = m.decode_matrix(&h).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn penalty_values() {
        let at_p = Array2::from_elem((4, 3), 0.05);
        assert!(sparsity_penalty(&at_p, 0.05).abs() < 1e-15);
        let t = Array2::from_elem((2, 1), 0.2);
        let want = 0.05 * 0.25f64.ln() + 0.95 * (0.95f64 / 0.8).ln();
        assert!((sparsity_penalty(&t, 0.05) - want).abs() < 1e-15);
        assert!((want - 0.09394).abs() < 1e-5);
        let saturated = Array2::from_elem((2, 2), 1.0);
        assert!(sparsity_penalty(&saturated, 0.05).is_finite());
    }

    #[test]
    fn decode_one_hot_returns_atom() {
        let m = tiny();
        let mut h = Array2::zeros((1, 4));
        h[[0, 2]] = 1.0;
        let out = m.decode_matrix(&h).unwrap();
        let atom = m.atoms().unwrap().atom(2);
        assert_eq!(out.row(0).to_vec(), atom.pixels());
        assert!(m.decode_matrix(&Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn beta_zero_is_pure_mse() {
        let m = tiny();
        let imgs = random_images(3, 8, 8, 1);
        let refs: Vec<&GrayImage> = imgs.iter().collect();
        let l = m.loss(&refs, 0.0, 0.05, Mode::Inference).unwrap();
        assert_eq!(l.total, l.mse);
        let x = m.encode(&imgs).unwrap();
        let y = m.decode_matrix(&x).unwrap();
        let mut mse = 0.0;
        for (i, img) in imgs.iter().enumerate() {
            for (j, &v) in img.pixels().iter().enumerate() {
                mse += (y[[i, j]] - v).powi(2);
            }
        }
        assert!((l.mse - mse / (3.0 * 64.0)).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradient_check_64() {
        let mut m = tiny();
        let imgs = random_images(GRAD_CHECK_BATCH, 8, 8, 5);
        let rep = model_grad_check(&mut m, &imgs, 0.5, 0.05, GRAD_CHECK_EPS, false).unwrap();
        assert!(rep.max_rel_error <= 1e-5, "{rep:?}");
        let bad = model_grad_check(&mut m, &imgs, 0.5, 0.05, GRAD_CHECK_EPS, true).unwrap();
        assert!(bad.max_rel_error > 1e-2, "{bad:?}");
    }

    #[test]
    fn encoder_alone_passes_layer_grad_check() {
        let mut m = tiny();
        let x = m.batch_tensor(&random_images(2, 8, 8, 8).iter().collect::<Vec<_>>()).unwrap();
        let rep = crate::neuralnet::grad_check(&mut m.encoder, &x, GRAD_CHECK_EPS).unwrap();
        assert!(rep.max_rel_error <= 1e-5, "{rep:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny();
        let back = AsymAeModel::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.encoder.layers(), m.encoder.layers());
        assert_eq!(back.decoder.layers(), m.decoder.layers());
        let nets = nets_to_bytes(&[&m.encoder]);
        assert!(AsymAeModel::<f64>::from_bytes(&nets).is_err());
    }

    #[test]
    fn one_epoch_keeps_weights_non_negative() {
        let mut m = tiny();
        let imgs = random_images(32, 8, 8, 2);
        let set = ImageSet::new("rand", 8, 8, imgs).unwrap();
        let cfg = AsymAeConfig {
            epochs: 1,
            batch_size: 8,
            ..AsymAeConfig::tiny()
        };
        let mut steps = 0;
        let trace = train_with(&mut m, &set, &cfg, |m, ev| {
            assert!(m.min_decoder_weight() >= 0.0);
            if let TrainEvent::Step { .. } = ev {
                steps += 1;
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(steps, 4);
        assert_eq!(trace.len(), 1);
        assert!(m.min_decoder_weight() >= 0.0);
    }

    #[test]
    fn trace_csv_layout() {
        let csv = trace_to_csv(&[EpochRecord {
            epoch: 1,
            total: 0.5,
            mse: 0.25,
            penalty: 250.0,
        }])
        .unwrap();
        assert_eq!(csv, "epoch,total,mse,penalty\n1,5e-1,2.5e-1,2.5e2\n");
    }
}

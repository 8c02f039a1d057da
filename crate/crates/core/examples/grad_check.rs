//! Finite-difference checks: a small hand-built network, then the whole
//! tiny auto-encoder including its sparsity penalty, in both precisions.
//!
//!     cargo run --release --example grad_check

use morphdict::asymae::{build_model, model_grad_check, random_images, AsymAeConfig, AsymAeModel, GRAD_CHECK_BATCH, GRAD_CHECK_EPS};
use morphdict::neuralnet::{grad_check, BatchNorm, Conv2d, Dense, Layer, NeuralNet, Tensor};
use morphdict::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = NeuralNet::new(
        vec![1, 6, 6],
        vec![
            Layer::Conv2d(Conv2d::new(1, 2, 3, 1, 1, &mut rng)),
            Layer::LeakyRelu(0.1),
            Layer::Flatten,
            Layer::Dense(Dense::new(72, 5, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(5, 0.9, 1e-5)),
            Layer::Sigmoid,
        ],
    )?;
    let input = Tensor::new(vec![4, 1, 6, 6], (0..144).map(|_| rng.gen::<f64>()).collect())?;
    let r = grad_check(&mut net, &input, GRAD_CHECK_EPS)?;
    println!("small net: {} parameters, max relative error {:e}", r.checked, r.max_rel_error);

    let cfg = AsymAeConfig::tiny();
    let images = random_images(GRAD_CHECK_BATCH, 8, 8, 0);
    let mut m64: AsymAeModel<f64> = build_model(&cfg, 8, 8)?;
    let r = model_grad_check(&mut m64, &images, 0.5, cfg.p, GRAD_CHECK_EPS, false)?;
    println!("tiny auto-encoder, 64-bit: max relative error {:e}", r.max_rel_error);
    let mut m32: AsymAeModel<f32> = build_model(&cfg, 8, 8)?;
    let r = model_grad_check(&mut m32, &images, 0.5, cfg.p, GRAD_CHECK_EPS, false)?;
    println!("tiny auto-encoder, 32-bit: max relative error {:e}", r.max_rel_error);
    let r = model_grad_check(&mut m64, &images, 0.5, cfg.p, GRAD_CHECK_EPS, true)?;
    println!("with one gradient corrupted by 10%:  {:e}", r.max_rel_error);
    Ok(())
}

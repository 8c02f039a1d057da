//! Trains the asymmetric auto-encoder and scores it on held-out images.
//!
//!     cargo run --release --example train_asymae
//!
//! TRAIN, TEST, EPOCHS and PRECISION (32|64) override the small defaults.

mod common;

use morphdict::asymae::{build_model, train_with, AsymAeConfig, AsymAeModel, TrainEvent};
use morphdict::dataset::Split;
use morphdict::evaluation::{score, ModelOutputs};
use morphdict::morphology::disk_se;
use morphdict::neuralnet::Real;
use morphdict::{ImageSet, Result};

fn run<T: Real>(cfg: &AsymAeConfig, train_set: &ImageSet, test_set: &ImageSet) -> Result<()> {
    let mut model: AsymAeModel<T> = build_model(cfg, train_set.height(), train_set.width())?;
    let start = std::time::Instant::now();
    train_with(&mut model, train_set, cfg, |_, event| {
        if let TrainEvent::Epoch(rec) = event {
            println!(
                "epoch {:>3}  loss {:.5}  mse {:.5}  kl {:.3}  ({:.0?})",
                rec.epoch,
                rec.total,
                rec.mse,
                rec.penalty,
                start.elapsed()
            );
        }
        Ok(())
    })?;
    println!("min decoder weight: {}", model.min_decoder_weight());

    let codes = model.encode(test_set.images())?;
    let recon = model.decode_matrix(&codes)?;
    let atoms = model.atoms()?;
    let report = score(
        "asymae",
        test_set.name(),
        &test_set.to_matrix(),
        ModelOutputs {
            codes: &codes,
            reconstruction: &recon,
            dictionary: &atoms,
        },
        &disk_se(1.0)?,
        1,
    )?;
    println!(
        "test: reconstruction {:.5}, code sparsity {:.3}, dilation error {:.5}",
        report.reconstruction_error, report.mean_code_sparsity, report.dilation_approx_error
    );
    Ok(())
}

fn main() -> Result<()> {
    let train_set = common::images(Split::Train, common::env_or("TRAIN", 1000));
    let test_set = common::images(Split::Test, common::env_or("TEST", 500));
    let cfg = AsymAeConfig {
        epochs: common::env_or("EPOCHS", 3),
        precision: common::env_or("PRECISION", "64".to_string()).parse()?,
        early_stop: false,
        ..AsymAeConfig::default()
    };
    match cfg.precision {
        morphdict::asymae::Precision::F32 => run::<f32>(&cfg, &train_set, &test_set),
        morphdict::asymae::Precision::F64 => run::<f64>(&cfg, &train_set, &test_set),
    }
}

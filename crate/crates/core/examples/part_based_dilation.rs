//! Part-based dilation: dilate the atoms of a sparse NMF dictionary once,
//! then approximate the dilation of any image by recombining them with the
//! image's codes. Compares non-negative codes against unconstrained
//! least-squares codes over the same dictionary.
//!
//!     cargo run --release --example part_based_dilation
//!
//! Writes out/examples/part_based_dilation.pgm with rows of
//! (input, exact dilation, part-based dilation).

mod common;

use morphdict::dataset::Split;
use morphdict::evaluation::{clip01_image, dilation_approx_error, write_montage, TileScale};
use morphdict::morphology::{dilate, dilate_dictionary, disk_se, encodings_from_matrix, part_based_apply};
use morphdict::nmf::{encode_offline, encode_pseudoinverse, factorize_set, NmfConfig};
use morphdict::{Result, SparsityTarget};

fn main() -> Result<()> {
    let train = common::images(Split::Train, common::env_or("M", 1000));
    let test = common::images(Split::Test, 200);
    let cfg = NmfConfig {
        k: common::env_or("K", 64),
        s_h: Some(SparsityTarget::new(0.6)?),
        max_iter: common::env_or("ITER", 200),
        seed: 0,
        ..NmfConfig::default()
    };
    let dict = factorize_set(&train, &cfg)?.dictionary(train.height(), train.width())?;
    let se = disk_se(common::env_or("RADIUS", 1.0))?;
    let x = test.to_matrix();

    // new images: non-negative codes by projected gradient, no sparseness target
    let nonneg = encode_offline(test.images(), &dict, None, 500, 1e-6)?.matrix();
    let pinv = encode_pseudoinverse(test.images(), &dict)?;
    let err = |h: &ndarray::Array2<f64>| dilation_approx_error(&x, h, &dict, &se);
    println!("dilation error with non-negative codes:  {:.5}", err(&nonneg)?);
    // negative codes are outside what the approximation is built for; the
    // error is computed anyway for comparison
    println!("dilation error with least-squares codes: {:.5}", err(&pinv.mapv(|v| v.max(0.0)))?);

    let dilated = dilate_dictionary(&dict, &se);
    let codes = encodings_from_matrix(&nonneg)?;
    let mut tiles = Vec::new();
    for (img, h) in test.images().iter().zip(&codes).take(6) {
        tiles.push(img.clone());
        tiles.push(dilate(img, &se));
        tiles.push(clip01_image(&part_based_apply(h, &dilated)?));
    }
    let path = "out/examples/part_based_dilation.pgm";
    write_montage(path, &tiles, 3, TileScale::Raw)?;
    println!("wrote {path}");
    Ok(())
}

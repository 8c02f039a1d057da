//! Flat dilation, erosion and opening of a few images with Euclidean disks,
//! plus a check of the adjunction on each of them.
//!
//!     cargo run --example morphology_basics
//!
//! Writes out/examples/morphology.pgm: one row per image with the input and
//! its dilation, erosion and opening.

mod common;

use morphdict::dataset::Split;
use morphdict::evaluation::{write_montage, TileScale};
use morphdict::morphology::{dilate, disk_se, erode, open};
use morphdict::{GrayImage, Result};

fn leq(a: &GrayImage, b: &GrayImage) -> bool {
    a.pixels().iter().zip(b.pixels()).all(|(x, y)| x <= y)
}

fn main() -> Result<()> {
    let set = common::images(Split::Test, 4);
    let radius = common::env_or("RADIUS", 1.0);
    let se = disk_se(radius)?;
    println!("disk of radius {radius}: {} offsets {:?}", se.len(), se.offsets());

    let mut tiles = Vec::new();
    for (i, x) in set.images().iter().enumerate() {
        let (d, e, o) = (dilate(x, &se), erode(x, &se), open(x, &se));
        // d(x) <= y  <=>  x <= e(y), tried with y = d(x) and y = x
        let adj = leq(x, &erode(&d, &se)) && (leq(&d, x) == leq(x, &e));
        let mass = |img: &GrayImage| img.pixels().iter().sum::<f64>();
        println!(
            "image {i}: mass {:.1}, dilated {:.1}, eroded {:.1}, opened {:.1}, adjunction {}",
            mass(x),
            mass(&d),
            mass(&e),
            mass(&o),
            if adj { "holds" } else { "BROKEN" }
        );
        tiles.extend([x.clone(), d, e, o]);
    }
    let path = "out/examples/morphology.pgm";
    write_montage(path, &tiles, 4, TileScale::Raw)?;
    println!("wrote {path}");
    Ok(())
}

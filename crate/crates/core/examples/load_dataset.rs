//! Loads an MNIST-style IDX split, prints its shape and label histogram and
//! checks that re-encoding gives the same bytes.
//!
//!     MORPHDICT_DATA_DIR=/path/to/mnist cargo run --example load_dataset

use morphdict::dataset::{default_data_dir, load_split, parse_idx_images, synthetic_strokes, Split};
use morphdict::Result;

fn main() -> Result<()> {
    let dir = default_data_dir();
    let set = match load_split(&dir, Split::Test, "mnist") {
        Ok(set) => set,
        Err(e) => {
            println!("{}: {e}\nfalling back to synthetic strokes", dir.display());
            synthetic_strokes("synthetic", 100, 28, 28, 0)
        }
    };
    println!("{}: {} images of {}x{}", set.name(), set.len(), set.height(), set.width());
    let mean = set.images().iter().flat_map(|i| i.pixels()).sum::<f64>() / (set.len() * set.pixel_count()) as f64;
    println!("mean intensity {mean:.4}");
    if let Some(labels) = set.labels() {
        let mut hist = [0usize; 10];
        for &l in labels {
            hist[usize::from(l).min(9)] += 1;
        }
        println!("labels {hist:?}");
    }
    let bytes = set.to_idx_bytes();
    let back = parse_idx_images(&bytes, set.name())?;
    println!(
        "IDX round trip: {} bytes, {}",
        bytes.len(),
        if back.images() == set.images() { "identical" } else { "DIFFERENT" }
    );
    Ok(())
}

// Shared by the examples: real MNIST when it is on disk, synthetic strokes
// otherwise, so every example runs anywhere.

use morphdict::dataset::{default_data_dir, load_split, synthetic_strokes, Split};
use morphdict::ImageSet;

#[allow(dead_code)]
pub fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

/// The first `limit` images of a split.
#[allow(dead_code)]
pub fn images(split: Split, limit: usize) -> ImageSet {
    let dir = default_data_dir();
    match load_split(&dir, split, "mnist") {
        Ok(set) => set.take(limit),
        Err(e) => {
            eprintln!("({} unavailable: {e}; using synthetic strokes)", dir.display());
            let seed = if split == Split::Train { 1 } else { 2 };
            synthetic_strokes("synthetic", limit, 28, 28, seed)
        }
    }
}

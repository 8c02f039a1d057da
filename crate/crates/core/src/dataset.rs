//! IDX ingestion (MNIST / Fashion-MNIST), the in-memory image types and
//! seeded mini-batch planning.
//!
//! IDX layout: a 4-byte big-endian magic (2051 for images, 2049 for
//! labels), big-endian `u32` dimension sizes (count, rows, cols for images;
//! count for labels), then unsigned bytes in row-major order. Gzipped files
//! are detected by their `1f 8b` prefix and decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// A single-channel image stored row-major.
///
/// Images read from a dataset hold intensities in `[0, 1]`. The same type
/// carries raw model outputs and dictionary atoms, which may leave that
/// range until they are passed through [`crate::evaluation::clip01`].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::arg(format!(
                "image of {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel value {bad}")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    /// True when every pixel lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// An ordered collection of equally sized images with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    name: String,
    height: usize,
    width: usize,
    images: Vec<GrayImage>,
    labels: Option<Vec<u8>>,
}

impl ImageSet {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        images: Vec<GrayImage>,
    ) -> Result<Self> {
        if let Some(img) = images
            .iter()
            .find(|img| img.height() != height || img.width() != width)
        {
            return Err(Error::arg(format!(
                "image set is {height}x{width} but contains a {}x{} image",
                img.height(),
                img.width()
            )));
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            images,
            labels: None,
        })
    }

    /// Builds a set from the rows of an `M x N` matrix (`N = height * width`).
    pub fn from_matrix(
        name: impl Into<String>,
        height: usize,
        width: usize,
        matrix: &Array2<f64>,
    ) -> Result<Self> {
        if matrix.ncols() != height * width {
            return Err(Error::arg(format!(
                "matrix has {} columns, images need {}",
                matrix.ncols(),
                height * width
            )));
        }
        let images = matrix
            .rows()
            .into_iter()
            .map(|row| GrayImage::new(height, width, row.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, height, width, images)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per image.
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Attaches class labels; the count must match the number of images.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.images.len() {
            return Err(Error::arg(format!(
                "label count {} does not match image count {}",
                labels.len(),
                self.images.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// The first `count` images (and labels), or the whole set if smaller.
    pub fn take(&self, count: usize) -> ImageSet {
        self.select(&(0..count.min(self.len())).collect::<Vec<_>>())
            .expect("indices are in range")
    }

    /// A new set made of the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<ImageSet> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(format!(
                "image index {bad} out of range for a set of {}",
                self.len()
            )));
        }
        Ok(ImageSet {
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        })
    }

    /// The `M x N` data matrix, one image per row.
    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.pixel_count();
        let mut out = Array2::zeros((self.len(), n));
        for (mut row, img) in out.rows_mut().into_iter().zip(&self.images) {
            row.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(img.pixels());
        }
        out
    }

    /// Encodes the set as IDX image bytes (pixels rounded to `0..=255`).
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * self.pixel_count());
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&(self.height as u32).to_be_bytes());
        out.extend_from_slice(&(self.width as u32).to_be_bytes());
        for img in &self.images {
            out.extend(
                img.pixels()
                    .iter()
                    .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
        out
    }
}

/// Encodes labels as IDX label bytes.
pub fn labels_to_idx_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Format(format!(
            "bad IDX magic {magic}, expected {want}"
        )));
    }
    Ok(())
}

/// Parses IDX image bytes. Pixel bytes are divided by 255.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<ImageSet> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let n = rows * cols;
    let expected = 16 + count * n;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let images = bytes[16..expected]
        .chunks_exact(n.max(1))
        .take(count)
        .map(|chunk| GrayImage {
            height: rows,
            width: cols,
            pixels: chunk.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
        .collect();
    ImageSet::new(name, rows, cols, images)
}

/// Parses IDX label bytes, one byte per label.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an IDX image file (plain or gzipped). The set is named after the
/// file stem.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.trim_end_matches(".gz").to_string())
        .unwrap_or_default();
    parse_idx_images(&bytes, &name)
}

/// Loads an IDX label file (plain or gzipped).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?)
}

/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "MORPHDICT_DATA_DIR";
/// Used when [`DATA_DIR_ENV`] is unset.
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// `$MORPHDICT_DATA_DIR`, or `data/mnist`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// The two native splits of MNIST-style datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Standard file stems: `(images, labels)`.
    pub fn file_stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("split must be train or test, got {s:?}"))),
        }
    }
}

/// `dir/stem`, or `dir/stem.gz` when only the compressed file exists.
pub fn resolve_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads one split from `dir`, with labels when the label file is present.
/// The set is named `name`.
pub fn load_split(dir: &Path, split: Split, name: &str) -> Result<ImageSet> {
    let (images, labels) = split.file_stems();
    let mut set = load_idx_images(resolve_idx(dir, images))?;
    set.name = name.to_string();
    let labels = resolve_idx(dir, labels);
    if labels.exists() {
        set = set.with_labels(load_idx_labels(labels)?)?;
    }
    Ok(set)
}

/// Digit-like stand-in data: each image holds two to four random thick
/// strokes, quantized to multiples of 1/255 like decoded IDX bytes.
pub fn synthetic_strokes(
    name: &str,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> ImageSet {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let images = (0..count)
        .map(|_| {
            let strokes: Vec<[f64; 5]> = (0..rng.gen_range(2..=4))
                .map(|_| {
                    [
                        rng.gen_range(0.2..0.8) * h,
                        rng.gen_range(0.2..0.8) * w,
                        rng.gen_range(0.2..0.8) * h,
                        rng.gen_range(0.2..0.8) * w,
                        rng.gen_range(0.8..1.6),
                    ]
                })
                .collect();
            let mut img = GrayImage::zeros(height, width);
            for r in 0..height {
                for c in 0..width {
                    let (y, x) = (r as f64, c as f64);
                    let v = strokes
                        .iter()
                        .map(|&[y0, x0, y1, x1, thick]| {
                            let (dy, dx) = (y1 - y0, x1 - x0);
                            let len2 = (dy * dy + dx * dx).max(1e-9);
                            let t = (((y - y0) * dy + (x - x0) * dx) / len2).clamp(0.0, 1.0);
                            let d = ((y - y0 - t * dy).powi(2) + (x - x0 - t * dx).powi(2)).sqrt();
                            (1.0 - (d - thick).max(0.0)).clamp(0.0, 1.0)
                        })
                        .fold(0.0, f64::max);
                    img.set(r, c, (v * 255.0).round() / 255.0);
                }
            }
            img
        })
        .collect();
    ImageSet::new(name, height, width, images).expect("uniform dims")
}

/// A seeded shuffle of image indices cut into mini-batches.
///
/// The permutation comes from ChaCha8 seeded with `seed` followed by a
/// Fisher-Yates shuffle, so it is identical on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    batch_size: usize,
    seed: u64,
    order: Vec<usize>,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Index slices for each batch; the last one may be partial.
    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }
}

pub fn make_batches(set: &ImageSet, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    plan_batches(set.len(), batch_size, seed)
}

/// Same as [`make_batches`] for a bare item count.
pub fn plan_batches(count: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::arg("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(BatchPlan {
        batch_size,
        seed,
        order,
    })
}

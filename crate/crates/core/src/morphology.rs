//! Flat grayscale morphology on [`GrayImage`]s and the part-based
//! approximation of an operator through a dictionary.
//!
//! Border handling: reads outside the grid are 0 for dilation and 1 for
//! erosion, so that `dilate(x) <= y` iff `x <= erode(y)` on the finite grid
//! for images valued in `[0, 1]`.

use ndarray::Array2;

use crate::dataset::GrayImage;
use crate::error::{Error, Result};

/// A flat structuring element given by its integer offsets `(dy, dx)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    offsets: Vec<(i32, i32)>,
}

impl StructuringElement {
    /// Builds an element from arbitrary offsets. The origin must be present.
    pub fn new(mut offsets: Vec<(i32, i32)>) -> Result<Self> {
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.binary_search(&(0, 0)).is_err() {
            return Err(Error::arg("structuring element must contain the origin"));
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Largest absolute coordinate over all offsets.
    pub fn reach(&self) -> usize {
        self.offsets
            .iter()
            .map(|&(dy, dx)| dy.unsigned_abs().max(dx.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.offsets
            .iter()
            .all(|&(dy, dx)| self.offsets.binary_search(&(-dy, -dx)).is_ok())
    }
}

/// Euclidean disk on the integer grid: all `(dy, dx)` with
/// `dy² + dx² <= radius²`. Radius 1 is the 5-pixel cross, radius 1.5 the
/// 3x3 square.
pub fn disk_se(radius: f64) -> Result<StructuringElement> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::arg(format!("disk radius must be >= 0, got {radius}")));
    }
    let r = radius.floor() as i32;
    let r2 = radius * radius;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if f64::from(dy * dy + dx * dx) <= r2 {
                offsets.push((dy, dx));
            }
        }
    }
    StructuringElement::new(offsets)
}

fn padded(img: &GrayImage, pad: usize, fill: f64) -> (Vec<f64>, usize) {
    let pw = img.width() + 2 * pad;
    let ph = img.height() + 2 * pad;
    let mut buf = vec![fill; pw * ph];
    for r in 0..img.height() {
        let src = &img.pixels()[r * img.width()..(r + 1) * img.width()];
        let start = (r + pad) * pw + pad;
        buf[start..start + img.width()].copy_from_slice(src);
    }
    (buf, pw)
}

/// `out(p) = op_{o in se} img(p + sign * o)` over a padded copy.
fn flat_filter(
    img: &GrayImage,
    se: &StructuringElement,
    fill: f64,
    sign: i32,
    init: f64,
    op: fn(f64, f64) -> f64,
) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let pad = se.reach();
    let (buf, pw) = padded(img, pad, fill);
    let mut out = vec![init; h * w];
    for &(dy, dx) in se.offsets() {
        let oy = (pad as i32 + sign * dy) as usize;
        let ox = (pad as i32 + sign * dx) as usize;
        for r in 0..h {
            let src = &buf[(r + oy) * pw + ox..(r + oy) * pw + ox + w];
            let dst = &mut out[r * w..(r + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = op(*d, s);
            }
        }
    }
    GrayImage::new(h, w, out).expect("dimensions preserved")
}

/// Flat dilation: `out(p) = max_{o in se} img(p - o)`, reading 0 outside.
pub fn dilate(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    flat_filter(img, se, 0.0, -1, f64::NEG_INFINITY, f64::max)
}

/// Flat erosion: `out(p) = min_{o in se} img(p + o)`, reading 1 outside.
pub fn erode(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    flat_filter(img, se, 1.0, 1, f64::INFINITY, f64::min)
}

/// Opening: erosion followed by dilation.
pub fn open(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    dilate(&erode(img, se), se)
}

/// Pixel-wise supremum of two images of equal size.
pub fn supremum(a: &GrayImage, b: &GrayImage) -> Result<GrayImage> {
    if !a.same_dims(b) {
        return Err(Error::arg("supremum of images with different sizes"));
    }
    let px = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| x.max(*y))
        .collect();
    GrayImage::new(a.height(), a.width(), px)
}

/// `k` non-negative atom images stored as the rows of a `k x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    height: usize,
    width: usize,
    atoms: Array2<f64>,
}

impl Dictionary {
    pub fn from_matrix(height: usize, width: usize, atoms: Array2<f64>) -> Result<Self> {
        if atoms.ncols() != height * width {
            return Err(Error::arg(format!(
                "dictionary rows have {} entries, {height}x{width} atoms need {}",
                atoms.ncols(),
                height * width
            )));
        }
        if let Some(v) = atoms.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg(format!(
                "dictionary atoms must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            atoms: atoms.as_standard_layout().into_owned(),
        })
    }

    pub fn from_images(atoms: &[GrayImage]) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::arg("dictionary needs at least one atom"))?;
        let (h, w) = (first.height(), first.width());
        if atoms.iter().any(|a| a.height() != h || a.width() != w) {
            return Err(Error::arg("dictionary atoms must share dimensions"));
        }
        let mut m = Array2::zeros((atoms.len(), h * w));
        for (mut row, a) in m.rows_mut().into_iter().zip(atoms) {
            row.as_slice_mut().unwrap().copy_from_slice(a.pixels());
        }
        Self::from_matrix(h, w, m)
    }

    /// Number of atoms.
    pub fn k(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> GrayImage {
        GrayImage::new(self.height, self.width, self.atoms.row(j).to_vec())
            .expect("atom dimensions")
    }

    pub fn atoms(&self) -> Vec<GrayImage> {
        (0..self.k()).map(|j| self.atom(j)).collect()
    }

    /// Applies `op` to every atom.
    pub fn map_atoms(&self, op: impl Fn(&GrayImage) -> GrayImage) -> Dictionary {
        let mapped: Vec<GrayImage> = (0..self.k()).map(|j| op(&self.atom(j))).collect();
        Dictionary::from_images(&mapped).expect("morphological operators preserve shape and sign")
    }
}

/// A non-negative code vector, one coefficient per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding(Vec<f64>);

impl Encoding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg(format!(
                "encoding values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Rows of `codes` as encodings.
pub fn encodings_from_matrix(codes: &Array2<f64>) -> Result<Vec<Encoding>> {
    codes
        .rows()
        .into_iter()
        .map(|r| Encoding::new(r.to_vec()))
        .collect()
}

/// Stacks encodings into an `M x k` matrix.
pub fn encodings_to_matrix(codes: &[Encoding]) -> Result<Array2<f64>> {
    let k = codes.first().map_or(0, Encoding::len);
    if codes.iter().any(|c| c.len() != k) {
        return Err(Error::arg("encodings have different lengths"));
    }
    let flat: Vec<f64> = codes.iter().flat_map(|c| c.values().iter().copied()).collect();
    Ok(Array2::from_shape_vec((codes.len(), k), flat).expect("shape checked"))
}

/// Dilates every atom of `dict` by `se`.
pub fn dilate_dictionary(dict: &Dictionary, se: &StructuringElement) -> Dictionary {
    dict.map_atoms(|a| dilate(a, se))
}

/// Part-based approximation `sum_j h_j * phi(w_j)` given the already
/// processed atoms `phi(w_j)`. The result is not clipped.
pub fn part_based_apply(h: &Encoding, processed: &Dictionary) -> Result<GrayImage> {
    if h.len() != processed.k() {
        return Err(Error::arg(format!(
            "encoding has {} entries, dictionary has {} atoms",
            h.len(),
            processed.k()
        )));
    }
    let h = ndarray::ArrayView1::from(h.values());
    let px = h.dot(processed.matrix());
    GrayImage::new(processed.height(), processed.width(), px.to_vec())
}

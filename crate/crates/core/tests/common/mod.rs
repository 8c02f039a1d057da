// Independent reference implementations used by the integration tests and
// the acceptance runner. Deliberately naive: plain loops, no library calls
// beyond image construction.
#![allow(dead_code)]

use morphdict::{Dictionary, GrayImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All `(dy, dx)` with `dy² + dx² <= r²`, scanned over a generous window.
pub fn ball(radius: f64) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for dy in -8i32..=8 {
        for dx in -8i32..=8 {
            if ((dy * dy + dx * dx) as f64) <= radius * radius {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn at(img: &GrayImage, r: i64, c: i64, outside: f64) -> f64 {
    if r < 0 || c < 0 || r >= img.height() as i64 || c >= img.width() as i64 {
        outside
    } else {
        img.get(r as usize, c as usize)
    }
}

pub fn naive_dilate(img: &GrayImage, se: &[(i32, i32)]) -> GrayImage {
    let mut out = GrayImage::zeros(img.height(), img.width());
    for r in 0..img.height() as i64 {
        for c in 0..img.width() as i64 {
            let mut m = f64::NEG_INFINITY;
            for &(dy, dx) in se {
                let v = at(img, r - dy as i64, c - dx as i64, 0.0);
                if v > m {
                    m = v;
                }
            }
            out.set(r as usize, c as usize, m);
        }
    }
    out
}

pub fn naive_erode(img: &GrayImage, se: &[(i32, i32)]) -> GrayImage {
    let mut out = GrayImage::zeros(img.height(), img.width());
    for r in 0..img.height() as i64 {
        for c in 0..img.width() as i64 {
            let mut m = f64::INFINITY;
            for &(dy, dx) in se {
                let v = at(img, r + dy as i64, c + dx as i64, 1.0);
                if v < m {
                    m = v;
                }
            }
            out.set(r as usize, c as usize, m);
        }
    }
    out
}

pub fn naive_open(img: &GrayImage, se: &[(i32, i32)]) -> GrayImage {
    naive_dilate(&naive_erode(img, se), se)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
    let px = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    GrayImage::new(h, w, px).unwrap()
}

pub fn leq(a: &GrayImage, b: &GrayImage) -> bool {
    a.pixels().iter().zip(b.pixels()).all(|(x, y)| x <= y)
}

/// `(sqrt(n) - l1/l2) / (sqrt(n) - 1)`.
pub fn sigma(v: &[f64]) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for &x in v {
        l1 += x.abs();
        l2 += x * x;
    }
    let n = (v.len() as f64).sqrt();
    (n - l1 / l2.sqrt()) / (n - 1.0)
}

pub fn mse(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut count = 0usize;
    for i in 0..x.len() {
        for j in 0..x[i].len() {
            let d = x[i][j] - y[i][j];
            s += d * d;
            count += 1;
        }
    }
    s / count as f64
}

pub fn mean_sigma(rows: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut used = 0;
    for r in rows {
        if r.iter().all(|&v| v == 0.0) {
            continue;
        }
        s += sigma(r);
        used += 1;
    }
    s / used as f64
}

/// Squared error between the clipped part-based dilation and the exact one,
/// averaged over all pixels of all images.
pub fn dilation_error(
    x: &[Vec<f64>],
    codes: &[Vec<f64>],
    atoms: &[Vec<f64>],
    h: usize,
    w: usize,
    se: &[(i32, i32)],
) -> f64 {
    let img = |v: &Vec<f64>| GrayImage::new(h, w, v.clone()).unwrap();
    let dil_atoms: Vec<GrayImage> = atoms.iter().map(|a| naive_dilate(&img(a), se)).collect();
    let mut s = 0.0;
    for (xi, hi) in x.iter().zip(codes) {
        let exact = naive_dilate(&img(xi), se);
        for p in 0..h * w {
            let mut approx = 0.0;
            for (j, a) in dil_atoms.iter().enumerate() {
                approx += hi[j] * a.pixels()[p];
            }
            let approx = approx.clamp(0.0, 1.0);
            let d = approx - exact.pixels()[p];
            s += d * d;
        }
    }
    s / (x.len() * h * w) as f64
}

/// Atoms on a grid of cells far enough apart that their dilations never
/// overlap; images are non-negative combinations with values up to 1.
pub fn separated_fixture(seed: u64, radius: f64) -> (Array2<f64>, Array2<f64>, Dictionary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (20, 20);
    let gap = 2 * radius.floor() as usize + 1;
    let cell = 3;
    let stride = cell + gap;
    let mut atoms = Vec::new();
    let mut r0 = 1;
    while r0 + cell < h {
        let mut c0 = 1;
        while c0 + cell < w {
            let mut a = GrayImage::zeros(h, w);
            for r in r0..r0 + cell {
                for c in c0..c0 + cell {
                    if rng.gen_bool(0.7) {
                        a.set(r, c, rng.gen_range(0.1..1.0));
                    }
                }
            }
            a.set(r0 + 1, c0 + 1, 1.0);
            atoms.push(a);
            c0 += stride;
        }
        r0 += stride;
    }
    let dict = Dictionary::from_images(&atoms).unwrap();
    let m = 12;
    let codes = Array2::from_shape_fn((m, dict.k()), |_| {
        if rng.gen_bool(0.6) {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        }
    });
    let x = codes.dot(dict.matrix());
    (x, codes, dict)
}

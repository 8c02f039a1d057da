//! The three comparison measures (reconstruction error, code sparsity and
//! part-based dilation error), report CSV and PGM montages.
//!
//! All sums are accumulated sequentially in image order, so results do not
//! depend on the worker count.

use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::dataset::GrayImage;
use crate::error::{Error, Result};
use crate::morphology::{dilate, dilate_dictionary, Dictionary, StructuringElement};
use crate::sparsity::hoyer_sigma;

/// Header of the report CSV.
pub const REPORT_HEADER: &str = "model,dataset,k,rec_error,code_sparsity,dilation_error";

pub fn clip01(images: &Array2<f64>) -> Array2<f64> {
    images.mapv(|v| v.clamp(0.0, 1.0))
}

pub fn clip01_image(img: &GrayImage) -> GrayImage {
    let px = img.pixels().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    GrayImage::new(img.height(), img.width(), px).expect("same size")
}

/// Pixel-wise mean squared error `1/(MN) sum (x - x_hat)^2`.
pub fn reconstruction_error(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(Error::arg(format!(
            "reconstruction is {:?}, input is {:?}",
            x_hat.dim(),
            x.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::UndefinedMetric("empty image set".into()));
    }
    let mut sum = 0.0;
    for (a, b) in x.iter().zip(x_hat.iter()) {
        sum += (a - b) * (a - b);
    }
    Ok(sum / x.len() as f64)
}

/// Mean sparseness of the per-image codes together with the number of
/// all-zero rows that were skipped.
///
/// With a single atom every non-zero code has exactly one non-zero
/// coefficient and counts as fully sparse.
pub fn code_sparsity_summary(h: &Array2<f64>) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for row in h.rows() {
        if row.iter().all(|&v| v == 0.0) {
            skipped += 1;
            continue;
        }
        let s = if row.len() < 2 {
            1.0
        } else {
            hoyer_sigma(row.as_slice().unwrap_or(&row.to_vec()))?
        };
        sum += s;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "every code is zero; sparseness is undefined".into(),
        ));
    }
    Ok((sum / used as f64, skipped))
}

/// `1/M sum_i sigma(h_i)` over the non-zero rows of `h`.
pub fn mean_code_sparsity(h: &Array2<f64>) -> Result<f64> {
    code_sparsity_summary(h).map(|(m, _)| m)
}

/// Squared error between `clip01(D_B(x_i))` and `dilate(x_i)` summed over
/// the pixels of one image.
fn dilation_sq_error(
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    dilated: &Dictionary,
    se: &StructuringElement,
) -> f64 {
    let img = GrayImage::new(dilated.height(), dilated.width(), x.to_vec()).expect("row size");
    let exact = dilate(&img, se);
    let approx = h.dot(dilated.matrix());
    exact
        .pixels()
        .iter()
        .zip(approx.iter())
        .map(|(e, a)| {
            let d = a.clamp(0.0, 1.0) - e;
            d * d
        })
        .sum()
}

/// `1/(MN) sum (clip01(D_B(x_i)) - dilate(x_i))^2` where
/// `D_B(x_i) = sum_j h_ij dilate(w_j)`.
pub fn dilation_approx_error(
    x: &Array2<f64>,
    h: &Array2<f64>,
    dict: &Dictionary,
    se: &StructuringElement,
) -> Result<f64> {
    dilation_approx_error_par(x, h, dict, se, 1)
}

/// [`dilation_approx_error`] spread over `workers` threads. Per-image
/// partial sums are reduced in index order, so the value is identical for
/// every worker count.
pub fn dilation_approx_error_par(
    x: &Array2<f64>,
    h: &Array2<f64>,
    dict: &Dictionary,
    se: &StructuringElement,
    workers: usize,
) -> Result<f64> {
    let n = dict.height() * dict.width();
    if x.ncols() != n {
        return Err(Error::arg(format!(
            "images have {} pixels, atoms have {n}",
            x.ncols()
        )));
    }
    if h.nrows() != x.nrows() || h.ncols() != dict.k() {
        return Err(Error::arg(format!(
            "codes are {:?}, expected ({}, {})",
            h.dim(),
            x.nrows(),
            dict.k()
        )));
    }
    if x.is_empty() {
        return Err(Error::UndefinedMetric("empty image set".into()));
    }
    let dilated = dilate_dictionary(dict, se);
    let m = x.nrows();
    let mut per_image = vec![0.0; m];
    let workers = workers.max(1).min(m);
    if workers == 1 {
        for (i, out) in per_image.iter_mut().enumerate() {
            *out = dilation_sq_error(x.row(i), h.row(i), &dilated, se);
        }
    } else {
        let chunk = m.div_ceil(workers);
        std::thread::scope(|s| {
            for (c, out) in per_image.chunks_mut(chunk).enumerate() {
                let dilated = &dilated;
                s.spawn(move || {
                    for (off, o) in out.iter_mut().enumerate() {
                        let i = c * chunk + off;
                        *o = dilation_sq_error(x.row(i), h.row(i), dilated, se);
                    }
                });
            }
        });
    }
    Ok(per_image.iter().sum::<f64>() / (m * n) as f64)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub k: usize,
    pub reconstruction_error: f64,
    pub mean_code_sparsity: f64,
    pub dilation_approx_error: f64,
    /// Seconds since the Unix epoch; not part of the CSV.
    pub timestamp: u64,
}

impl MetricsReport {
    pub fn new(
        model: impl Into<String>,
        dataset: impl Into<String>,
        k: usize,
        reconstruction_error: f64,
        mean_code_sparsity: f64,
        dilation_approx_error: f64,
    ) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            model: model.into(),
            dataset: dataset.into(),
            k,
            reconstruction_error,
            mean_code_sparsity,
            dilation_approx_error,
            timestamp,
        }
    }
}

/// What a model produced for one image set.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs<'a> {
    /// `M × k` codes.
    pub codes: &'a Array2<f64>,
    /// `M × N` reconstructions, unclipped.
    pub reconstruction: &'a Array2<f64>,
    pub dictionary: &'a Dictionary,
}

/// All three measures for `x` (`M × N`) against a model's outputs.
pub fn score(
    model: &str,
    dataset: &str,
    x: &Array2<f64>,
    out: ModelOutputs<'_>,
    se: &StructuringElement,
    workers: usize,
) -> Result<MetricsReport> {
    let rec = reconstruction_error(x, &clip01(out.reconstruction))?;
    let sparsity = mean_code_sparsity(out.codes)?;
    let dil = dilation_approx_error_par(x, out.codes, out.dictionary, se, workers)?;
    Ok(MetricsReport::new(
        model,
        dataset,
        out.dictionary.k(),
        rec,
        sparsity,
        dil,
    ))
}

/// Formats `x` with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may have carried into a new leading digit
    let reparsed: f64 = s.parse().unwrap_or(x);
    if reparsed != 0.0 && reparsed.abs().log10().floor() as i32 != exp && decimals > 0 {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    s
}

/// Report rows as CSV under [`REPORT_HEADER`], six significant digits.
pub fn emit_report(reports: &[MetricsReport]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(REPORT_HEADER.split(','))
        .expect("writing to memory");
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.dataset.clone(),
            r.k.to_string(),
            format_sig6(r.reconstruction_error),
            format_sig6(r.mean_code_sparsity),
            format_sig6(r.dilation_approx_error),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 fields")
}

/// Parses CSV produced by [`emit_report`]. Timestamps come back as 0.
pub fn parse_report(text: &str) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("report header: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != REPORT_HEADER {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad number {s:?} in report")))
    };
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Format(format!("report row: {e}")))?;
            if rec.len() != 6 {
                return Err(Error::Format(format!("report row has {} fields", rec.len())));
            }
            Ok(MetricsReport {
                model: rec[0].to_string(),
                dataset: rec[1].to_string(),
                k: rec[2]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad k {:?}", &rec[2])))?,
                reconstruction_error: num(&rec[3])?,
                mean_code_sparsity: num(&rec[4])?,
                dilation_approx_error: num(&rec[5])?,
                timestamp: 0,
            })
        })
        .collect()
}

/// Display scaling applied to each montage tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TileScale {
    /// Min-max normalize each tile; constant tiles become mid-gray.
    #[default]
    PerTile,
    /// Clip to `[0, 1]` and keep the original scale.
    Raw,
}

/// Value of the one-pixel separators between tiles.
pub const SEPARATOR: f64 = 0.5;

/// Lays `images` out row-major on a grid with `cols` columns.
pub fn render_montage(images: &[GrayImage], cols: usize, scale: TileScale) -> Result<GrayImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::arg("montage needs at least one image"))?;
    if cols == 0 {
        return Err(Error::arg("montage needs at least one column"));
    }
    if images.iter().any(|i| !i.same_dims(first)) {
        return Err(Error::arg("montage images must share dimensions"));
    }
    let (th, tw) = (first.height(), first.width());
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let height = rows * th + rows - 1;
    let width = cols * tw + cols - 1;
    let mut canvas = GrayImage::filled(height, width, SEPARATOR);
    for (idx, img) in images.iter().enumerate() {
        let (gr, gc) = (idx / cols, idx % cols);
        let tile = scale_tile(img, scale);
        for r in 0..th {
            for c in 0..tw {
                canvas.set(gr * (th + 1) + r, gc * (tw + 1) + c, tile.get(r, c));
            }
        }
    }
    // unused cells of the last row
    for idx in images.len()..rows * cols {
        let (gr, gc) = (idx / cols, idx % cols);
        for r in 0..th {
            for c in 0..tw {
                canvas.set(gr * (th + 1) + r, gc * (tw + 1) + c, 0.0);
            }
        }
    }
    Ok(canvas)
}

fn scale_tile(img: &GrayImage, scale: TileScale) -> GrayImage {
    match scale {
        TileScale::Raw => clip01_image(img),
        TileScale::PerTile => {
            let (lo, hi) = img
                .pixels()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let px = if hi - lo > 0.0 {
                img.pixels().iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; img.len()]
            };
            GrayImage::new(img.height(), img.width(), px).expect("same size")
        }
    }
}

/// Binary PGM (`P5`, maxval 255) bytes of an image in `[0, 1]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.pixels()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Renders a montage and writes it as a binary PGM.
pub fn write_montage(
    path: impl AsRef<Path>,
    images: &[GrayImage],
    cols: usize,
    scale: TileScale,
) -> Result<GrayImage> {
    let canvas = render_montage(images, cols, scale)?;
    crate::write_atomic(path.as_ref(), &encode_pgm(&canvas))?;
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::disk_se;

    #[test]
    fn clip_values() {
        let m = Array2::from_shape_vec((1, 3), vec![1.3, -0.2, 0.4]).unwrap();
        assert_eq!(clip01(&m).into_raw_vec_and_offset().0, vec![1.0, 0.0, 0.4]);
    }

    #[test]
    fn reconstruction_error_closed_forms() {
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 / 10.0);
        assert_eq!(reconstruction_error(&x, &x).unwrap(), 0.0);
        let z = Array2::zeros((3, 4));
        let c = Array2::from_elem((3, 4), 0.1);
        assert!((reconstruction_error(&z, &c).unwrap() - 0.01).abs() < 1e-15);
        assert!(reconstruction_error(&z, &Array2::zeros((3, 3))).is_err());
        assert!(reconstruction_error(&x, &clip01(&x)).unwrap() == 0.0);
    }

    #[test]
    fn sparsity_closed_forms() {
        let one_hot = Array2::from_shape_fn((4, 5), |(i, j)| if i == j { 2.0 } else { 0.0 });
        assert_eq!(mean_code_sparsity(&one_hot).unwrap(), 1.0);
        let constant = Array2::from_elem((3, 5), 0.3);
        assert!(mean_code_sparsity(&constant).unwrap().abs() < 1e-15);
        let mut with_zero = constant.clone();
        with_zero.row_mut(1).fill(0.0);
        assert_eq!(code_sparsity_summary(&with_zero).unwrap().1, 1);
        assert!(matches!(
            mean_code_sparsity(&Array2::zeros((2, 3))),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn dilation_error_with_zero_codes() {
        let x = Array2::from_shape_fn((2, 9), |(i, j)| ((i * 3 + j) % 4) as f64 / 4.0);
        let dict = Dictionary::from_matrix(3, 3, Array2::from_elem((2, 9), 0.2)).unwrap();
        let se = disk_se(1.0).unwrap();
        let h = Array2::zeros((2, 2));
        let got = dilation_approx_error(&x, &h, &dict, &se).unwrap();
        let mut want = 0.0;
        for row in x.rows() {
            let img = GrayImage::new(3, 3, row.to_vec()).unwrap();
            want += dilate(&img, &se).pixels().iter().map(|v| v * v).sum::<f64>();
        }
        assert!((got - want / 18.0).abs() < 1e-15);
        let par = dilation_approx_error_par(&x, &h, &dict, &se, 2).unwrap();
        assert_eq!(par, got);
        assert!(dilation_approx_error(&x, &Array2::zeros((2, 3)), &dict, &se).is_err());
    }

    #[test]
    fn report_shapes() {
        assert_eq!(emit_report(&[]), format!("{REPORT_HEADER}\n"));
        let r = MetricsReport::new("sparse-nmf", "mnist", 100, 0.0110004, 0.66, 0.0123456789);
        let text = emit_report(&[r]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "sparse-nmf,mnist,100,0.0110004,0.660000,0.0123457"
        );
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1.00000");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(9.999996), "10.0000");
        assert_eq!(format_sig6(0.00001234567), "1.23457e-5");
    }

    #[test]
    fn montage_single_and_grid() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.5, 0.25, 1.0]).unwrap();
        let one = render_montage(&[img.clone()], 3, TileScale::PerTile).unwrap();
        assert_eq!(one, img);

        let tiles = vec![img.clone(); 16];
        let grid = render_montage(&tiles, 4, TileScale::PerTile).unwrap();
        assert_eq!((grid.height(), grid.width()), (4 * 2 + 3, 4 * 2 + 3));
        assert_eq!(grid.get(2, 0), SEPARATOR);
        assert_eq!(grid.get(0, 2), SEPARATOR);

        let flat = GrayImage::filled(2, 2, 0.9);
        let m = render_montage(&[flat], 1, TileScale::PerTile).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 0.5));

        assert!(render_montage(&[], 2, TileScale::PerTile).is_err());
    }

    #[test]
    fn pgm_bytes() {
        let img = GrayImage::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(encode_pgm(&img), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}

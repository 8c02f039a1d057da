//! Sparse non-negative matrix factorization `X ~ H W` and encoding of new
//! samples against a fixed dictionary.
//!
//! Orientation: `X` is `M x N` (one image per row), `H` is `M x k` (one
//! code per row) and `W` is `k x N` (one atom per row). A sparseness target
//! on `H` constrains its columns, i.e. the activations of one atom across
//! the data set; a target on `W` constrains its rows.
//!
//! A factor with a target is updated by a projected gradient step with
//! step halving until the objective does not increase; an unconstrained
//! factor gets the Lee-Seung multiplicative update. Constrained columns of
//! `H` are kept at unit L2 norm so the scale lives in `W`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{GrayImage, ImageSet};
use crate::error::{Error, Result};
use crate::morphology::{Dictionary, Encoding};
use crate::sparsity::{hoyer_sigma, project_sparseness, project_to_norms, SparsityTarget};

/// Magic of the factorization container.
pub const MDIC_MAGIC: &[u8; 4] = b"MDIC";
pub const MDIC_VERSION: u32 = 1;

const MU_EPS: f64 = 1e-9;
const MIN_STEP: f64 = 1e-200;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfConfig {
    pub k: usize,
    pub s_h: Option<SparsityTarget>,
    pub s_w: Option<SparsityTarget>,
    pub max_iter: usize,
    /// Stop once the relative objective decrease of an iteration drops
    /// below this value.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            k: 100,
            s_h: None,
            s_w: None,
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// The result of [`factorize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    h: Array2<f64>,
    w: Array2<f64>,
    objective_trace: Vec<f64>,
    /// Set when the input was the zero matrix.
    pub degenerate: bool,
    /// Set when the relative-decrease criterion stopped the run.
    pub converged: bool,
}

impl Factorization {
    pub fn new(h: Array2<f64>, w: Array2<f64>) -> Result<Self> {
        if h.ncols() != w.nrows() {
            return Err(Error::arg(format!(
                "H is {}x{} but W is {}x{}",
                h.nrows(),
                h.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        if h.iter().chain(w.iter()).any(|v| !(*v >= 0.0)) {
            return Err(Error::arg("factors must be non-negative"));
        }
        Ok(Self {
            h,
            w,
            objective_trace: Vec::new(),
            degenerate: false,
            converged: false,
        })
    }

    /// Encodings, `M x k`.
    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    /// Dictionary, `k x N`.
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn dictionary(&self, height: usize, width: usize) -> Result<Dictionary> {
        Dictionary::from_matrix(height, width, self.w.clone())
    }

    pub fn encodings(&self) -> Vec<Encoding> {
        self.h
            .rows()
            .into_iter()
            .map(|r| Encoding::new(r.to_vec()).expect("H is non-negative"))
            .collect()
    }

    /// Serializes as `MDIC`: magic, then version, M, N, k as little-endian
    /// `u32`, then H and W as row-major little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, k) = self.h.dim();
        let n = self.w.ncols();
        let mut out = Vec::with_capacity(20 + 8 * k * (m + n));
        out.extend_from_slice(MDIC_MAGIC);
        for v in [MDIC_VERSION, m as u32, n as u32, k as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.h.iter().chain(self.w.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::Length {
                expected: 20,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MDIC_MAGIC {
            return Err(Error::Format("not an MDIC container".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != MDIC_VERSION {
            return Err(Error::Format(format!("unsupported MDIC version {version}")));
        }
        let (m, n, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let expected = 20 + 8 * k * (m + n);
        if bytes.len() != expected {
            return Err(Error::Length {
                expected,
                found: bytes.len(),
            });
        }
        let mut vals = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let h = Array2::from_shape_simple_fn((m, k), || vals.next().unwrap());
        let w = Array2::from_shape_simple_fn((k, n), || vals.next().unwrap());
        Self::new(h, w).map_err(|e| Error::Format(format!("corrupt MDIC payload: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

/// `||X||^2 - 2 <A, B> + <C, D>`, the expanded squared residual.
fn expanded_objective(
    xx: f64,
    cross: (&Array2<f64>, &Array2<f64>),
    gram: (&Array2<f64>, &Array2<f64>),
) -> f64 {
    let dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
    };
    (xx - 2.0 * dot(cross.0, cross.1) + dot(gram.0, gram.1)).max(0.0)
}

/// `||X - H W||^2` computed directly.
pub fn objective(x: &Array2<f64>, h: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let r = x - &h.dot(w);
    r.iter().map(|v| v * v).sum()
}

fn project_columns(h: &mut Array2<f64>, target: SparsityTarget) -> Result<()> {
    let l1 = target.l1_for(h.nrows(), 1.0);
    for mut col in h.columns_mut() {
        let p = project_to_norms(&col.to_vec(), l1, 1.0)?;
        col.assign(&ArrayView1::from(&p));
    }
    Ok(())
}

fn project_rows_keep_norm(w: &mut Array2<f64>, target: SparsityTarget) -> Result<()> {
    let n = w.ncols();
    for mut row in w.rows_mut() {
        let l2 = row.dot(&row).sqrt();
        if l2 > 0.0 {
            let p = project_to_norms(&row.to_vec(), target.l1_for(n, l2), l2)?;
            row.assign(&ArrayView1::from(&p));
        }
    }
    Ok(())
}

fn normalize_columns(h: &mut Array2<f64>, w: Option<&mut Array2<f64>>) {
    let norms: Vec<f64> = h.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    for (mut col, &nrm) in h.columns_mut().into_iter().zip(&norms) {
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    if let Some(w) = w {
        for (mut row, &nrm) in w.rows_mut().into_iter().zip(&norms) {
            if nrm > 0.0 {
                row *= nrm;
            }
        }
    }
}

fn check_input(x: &Array2<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::arg("data matrix must have at least one row and column"));
    }
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::arg(format!(
            "data matrix must be finite and non-negative, found {v}"
        )));
    }
    Ok(())
}

/// Factorizes the images of `set` (one per row).
pub fn factorize_set(set: &ImageSet, cfg: &NmfConfig) -> Result<Factorization> {
    factorize(&set.to_matrix(), cfg)
}

/// Sparse NMF of the non-negative `M x N` matrix `x`.
pub fn factorize(x: &Array2<f64>, cfg: &NmfConfig) -> Result<Factorization> {
    cfg.validate()?;
    check_input(x)?;
    let (m, n) = x.dim();
    let k = cfg.k;
    if x.iter().all(|&v| v == 0.0) {
        return Ok(Factorization {
            h: Array2::zeros((m, k)),
            w: Array2::zeros((k, n)),
            objective_trace: vec![0.0],
            degenerate: true,
            converged: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut h = Array2::from_shape_simple_fn((m, k), || rng.gen::<f64>());
    let mut w = Array2::from_shape_simple_fn((k, n), || rng.gen::<f64>());
    normalize_columns(&mut h, None);
    if let Some(t) = cfg.s_h {
        project_columns(&mut h, t)?;
    }
    if let Some(t) = cfg.s_w {
        project_rows_keep_norm(&mut w, t)?;
    }
    // least-squares scale of the initial product
    let hw = h.dot(&w);
    let scale = (x * &hw).sum() / (&hw * &hw).sum();
    if scale.is_finite() && scale > 0.0 {
        w *= scale;
    }

    let xx: f64 = x.iter().map(|v| v * v).sum();
    let mut obj = objective(x, &h, &w);
    let mut step_h = 1.0;
    let mut step_w = 1.0;
    let mut trace = Vec::with_capacity(cfg.max_iter);
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let prev = obj;

        // H update with W fixed
        let xwt = x.dot(&w.t());
        let wwt = w.dot(&w.t());
        match cfg.s_h {
            Some(t) => {
                let grad = h.dot(&wwt) - &xwt;
                loop {
                    let mut cand = &h - &(&grad * step_h);
                    project_columns(&mut cand, t)?;
                    let hth = cand.t().dot(&cand);
                    let cand_obj = expanded_objective(xx, (&cand, &xwt), (&hth, &wwt));
                    if cand_obj <= obj {
                        h = cand;
                        obj = cand_obj;
                        step_h *= 1.2;
                        break;
                    }
                    step_h /= 2.0;
                    if step_h < MIN_STEP {
                        break;
                    }
                }
            }
            None => {
                let denom = h.dot(&wwt) + MU_EPS;
                h.zip_mut_with(&(&xwt / &denom), |a, r| *a *= r);
                let hth = h.t().dot(&h);
                obj = expanded_objective(xx, (&h, &xwt), (&hth, &wwt));
                if cfg.s_w.is_some() {
                    normalize_columns(&mut h, Some(&mut w));
                }
            }
        }

        // W update with H fixed
        let htx = h.t().dot(x);
        let hth = h.t().dot(&h);
        match cfg.s_w {
            Some(t) => {
                let grad = hth.dot(&w) - &htx;
                loop {
                    let mut cand = &w - &(&grad * step_w);
                    project_rows_keep_norm(&mut cand, t)?;
                    let wwt = cand.dot(&cand.t());
                    let cand_obj = expanded_objective(xx, (&cand, &htx), (&wwt, &hth));
                    if cand_obj <= obj {
                        w = cand;
                        obj = cand_obj;
                        step_w *= 1.2;
                        break;
                    }
                    step_w /= 2.0;
                    if step_w < MIN_STEP {
                        break;
                    }
                }
            }
            None => {
                let denom = hth.dot(&w) + MU_EPS;
                w.zip_mut_with(&(&htx / &denom), |a, r| *a *= r);
                let wwt = w.dot(&w.t());
                obj = expanded_objective(xx, (&w, &htx), (&wwt, &hth));
            }
        }

        if !obj.is_finite() {
            return Err(Error::Numeric("NMF objective became non-finite".into()));
        }
        trace.push(obj);
        if (prev - obj) / prev.max(f64::MIN_POSITIVE) < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(Factorization {
        h,
        w,
        objective_trace: trace,
        degenerate: false,
        converged,
    })
}

/// Codes for new samples plus per-sample convergence flags.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineEncoding {
    pub codes: Vec<Encoding>,
    pub converged: Vec<bool>,
}

impl OfflineEncoding {
    pub fn matrix(&self) -> Array2<f64> {
        crate::morphology::encodings_to_matrix(&self.codes).expect("uniform code length")
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

fn largest_eigenvalue(g: &Array2<f64>) -> f64 {
    let k = g.nrows();
    let mut v = Array1::from_elem(k, 1.0 / (k as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let gv = g.dot(&v);
        let nrm = gv.dot(&gv).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        let next = nrm;
        v = gv / nrm;
        if (next - lambda).abs() <= 1e-12 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Encodes images against a fixed dictionary by minimizing
/// `||x - h W||^2` over `h >= 0`.
///
/// Without a target this is accelerated projected gradient with restart.
/// With a target each step is followed by a sparseness projection of the
/// whole code vector, and the best iterate seen is returned.
pub fn encode_offline(
    images: &[GrayImage],
    dict: &Dictionary,
    s_h: Option<SparsityTarget>,
    max_iter: usize,
    tol: f64,
) -> Result<OfflineEncoding> {
    let n = dict.height() * dict.width();
    if let Some(img) = images.iter().find(|i| i.len() != n) {
        return Err(Error::arg(format!(
            "image has {} pixels, dictionary atoms have {n}",
            img.len()
        )));
    }
    let w = dict.matrix();
    let g = w.dot(&w.t());
    let lip = largest_eigenvalue(&g) * 1.01;
    let mut codes = Vec::with_capacity(images.len());
    let mut converged = Vec::with_capacity(images.len());
    for img in images {
        let x = ArrayView1::from(img.pixels());
        let c = w.dot(&x);
        let xx = x.dot(&x);
        let (h, ok) = if lip == 0.0 {
            (Array1::zeros(dict.k()), true)
        } else {
            match s_h {
                None => nnls_accelerated(&g, &c, xx, lip, max_iter, tol),
                Some(t) => sparse_projected(&g, &c, xx, lip, t, max_iter, tol)?,
            }
        };
        codes.push(Encoding::new(h.to_vec())?);
        converged.push(ok);
    }
    Ok(OfflineEncoding { codes, converged })
}

fn quad_objective(g: &Array2<f64>, c: &Array1<f64>, xx: f64, h: &Array1<f64>) -> f64 {
    (xx - 2.0 * h.dot(c) + h.dot(&g.dot(h))).max(0.0)
}

fn nnls_accelerated(
    g: &Array2<f64>,
    c: &Array1<f64>,
    xx: f64,
    lip: f64,
    max_iter: usize,
    tol: f64,
) -> (Array1<f64>, bool) {
    let k = c.len();
    let mut h = Array1::<f64>::zeros(k);
    let mut y = h.clone();
    let mut t = 1.0f64;
    let mut f = quad_objective(g, c, xx, &h);
    for _ in 0..max_iter {
        let grad = g.dot(&y) - c;
        let next = (&y - &(grad / lip)).mapv(|v| v.max(0.0));
        let f_next = quad_objective(g, c, xx, &next);
        if f_next > f {
            // restart the momentum from the last good point
            y = h.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + &((&next - &h) * ((t - 1.0) / t_next));
        t = t_next;
        let decrease = f - f_next;
        h = next;
        f = f_next;
        if decrease <= tol * f.max(tol * xx.max(1e-300)) {
            let pg = (g.dot(&h) - c)
                .iter()
                .zip(h.iter())
                .map(|(gr, hv)| if *hv > 0.0 { gr.abs() } else { (-gr).max(0.0) })
                .fold(0.0f64, f64::max);
            if pg <= tol.sqrt() * lip.sqrt() * xx.sqrt().max(1e-12) {
                return (h, true);
            }
        }
    }
    (h, false)
}

fn sparse_projected(
    g: &Array2<f64>,
    c: &Array1<f64>,
    xx: f64,
    lip: f64,
    target: SparsityTarget,
    max_iter: usize,
    tol: f64,
) -> Result<(Array1<f64>, bool)> {
    let k = c.len();
    let mut h = Array1::<f64>::zeros(k);
    let mut best = h.clone();
    let mut best_f = quad_objective(g, c, xx, &h);
    let mut f = best_f;
    for _ in 0..max_iter {
        let grad = g.dot(&h) - c;
        let stepped = (&h - &(grad / lip)).mapv(|v| v.max(0.0));
        if !stepped.iter().any(|&v| v > 0.0) {
            return Ok((best, true));
        }
        h = Array1::from(project_sparseness(stepped.as_slice().unwrap(), target)?);
        let f_next = quad_objective(g, c, xx, &h);
        if f_next < best_f {
            best_f = f_next;
            best.assign(&h);
        }
        if (f - f_next).abs() <= tol * f.max(1e-300) {
            return Ok((best, true));
        }
        f = f_next;
    }
    Ok((best, false))
}

/// Unconstrained least-squares codes `x W^+` (may be negative; not a
/// part-based representation). Rank-deficient dictionaries give the
/// minimum-norm solution.
pub fn encode_pseudoinverse(images: &[GrayImage], dict: &Dictionary) -> Result<Array2<f64>> {
    let (k, n) = dict.matrix().dim();
    if let Some(img) = images.iter().find(|i| i.len() != n) {
        return Err(Error::arg(format!(
            "image has {} pixels, dictionary atoms have {n}",
            img.len()
        )));
    }
    let w = DMatrix::from_row_iterator(k, n, dict.matrix().iter().copied());
    let svd = w.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * f64::EPSILON * k.max(n) as f64;
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse failed: {e}")))?;
    let mut out = Array2::zeros((images.len(), k));
    for (mut row, img) in out.rows_mut().into_iter().zip(images) {
        let x = DMatrix::from_row_slice(1, n, img.pixels());
        let h = x * &pinv;
        row.iter_mut().zip(h.iter()).for_each(|(d, s)| *d = *s);
    }
    Ok(out)
}

/// `x_hat_i = sum_j h_ij w_j`, unclipped.
pub fn reconstruct(h: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    if h.ncols() != w.nrows() {
        return Err(Error::arg(format!(
            "cannot combine {} codes with {} atoms",
            h.ncols(),
            w.nrows()
        )));
    }
    Ok(h.dot(w))
}

/// Mean sparseness of the non-zero columns of `h`.
pub fn column_sparsity(h: &Array2<f64>) -> Vec<f64> {
    h.axis_iter(Axis(1))
        .filter_map(|c| hoyer_sigma(&c.to_vec()).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(m: usize, n: usize) -> Array2<f64> {
        let a = Array2::from_shape_fn((m, 1), |(i, _)| 0.2 + 0.1 * i as f64);
        let b = Array2::from_shape_fn((1, n), |(_, j)| 0.5 + 0.05 * ((j * 7) % 5) as f64);
        a.dot(&b)
    }

    #[test]
    fn exact_rank_one_is_recovered() {
        let x = rank_one(8, 8);
        let cfg = NmfConfig {
            k: 1,
            max_iter: 500,
            tol: 1e-12,
            ..Default::default()
        };
        let f = factorize(&x, &cfg).unwrap();
        assert!(*f.objective_trace().last().unwrap() <= 1e-6);
        assert!(objective(&x, f.h(), f.w()) <= 1e-6);
    }

    #[test]
    fn zero_matrix_gives_zero_factors() {
        let x = Array2::zeros((4, 3));
        let f = factorize(&x, &NmfConfig { k: 2, ..Default::default() }).unwrap();
        assert!(f.degenerate);
        assert!(f.h().iter().chain(f.w().iter()).all(|&v| v == 0.0));
        assert_eq!(f.objective_trace(), &[0.0]);
    }

    #[test]
    fn negative_input_rejected() {
        let mut x = Array2::zeros((2, 2));
        x[[0, 1]] = -0.5;
        assert!(matches!(
            factorize(&x, &NmfConfig { k: 1, ..Default::default() }),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = NmfConfig { k: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = NmfConfig { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn container_round_trip_and_size() {
        let h = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.5);
        let w = Array2::from_shape_fn((3, 4), |(i, j)| (i * j) as f64 * 0.25);
        let f = Factorization::new(h, w).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 20 + 8 * 3 * (5 + 4));
        let g = Factorization::from_bytes(&bytes).unwrap();
        assert_eq!(g.h(), f.h());
        assert_eq!(g.w(), f.w());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Factorization::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            Factorization::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn reconstruct_cases() {
        let w = Array2::from_shape_fn((3, 4), |(i, j)| (i + 2 * j) as f64);
        let eye = Array2::eye(3);
        assert_eq!(reconstruct(&eye, &w).unwrap(), w);
        let zero = Array2::zeros((2, 3));
        assert_eq!(reconstruct(&zero, &w).unwrap(), Array2::zeros((2, 4)));
        assert!(reconstruct(&Array2::zeros((2, 2)), &w).is_err());
    }

    fn disjoint_dict() -> Dictionary {
        let mut m = Array2::zeros((3, 16));
        m[[0, 0]] = 0.9;
        m[[0, 1]] = 0.4;
        m[[1, 7]] = 0.6;
        m[[2, 12]] = 0.3;
        m[[2, 15]] = 0.8;
        Dictionary::from_matrix(4, 4, m).unwrap()
    }

    #[test]
    fn offline_encoding_of_an_atom_is_one_hot() {
        let dict = disjoint_dict();
        for j in 0..3 {
            let enc = encode_offline(&[dict.atom(j)], &dict, None, 500, 1e-10).unwrap();
            for (i, &v) in enc.codes[0].values().iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() <= 1e-3, "atom {j}: {:?}", enc.codes[0]);
            }
        }
    }

    #[test]
    fn offline_encoding_of_zero_is_zero() {
        let dict = disjoint_dict();
        let enc = encode_offline(&[GrayImage::zeros(4, 4)], &dict, None, 100, 1e-8).unwrap();
        assert!(enc.codes[0].values().iter().all(|&v| v == 0.0));
        let t = SparsityTarget::new(0.5).unwrap();
        let enc = encode_offline(&[GrayImage::zeros(4, 4)], &dict, Some(t), 100, 1e-8).unwrap();
        assert!(enc.codes[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offline_encoding_with_target_meets_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_simple_fn((6, 16), || rng.gen::<f64>());
        let dict = Dictionary::from_matrix(4, 4, m).unwrap();
        let x = GrayImage::new(4, 4, (0..16).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        let t = SparsityTarget::new(0.7).unwrap();
        let enc = encode_offline(&[x], &dict, Some(t), 300, 1e-9).unwrap();
        let s = hoyer_sigma(enc.codes[0].values()).unwrap();
        assert!((s - 0.7).abs() < 1e-6);
    }

    #[test]
    fn pseudoinverse_orthogonal_atoms() {
        let dict = disjoint_dict();
        let h = encode_pseudoinverse(&[dict.atom(1), GrayImage::zeros(4, 4)], &dict).unwrap();
        for (j, &v) in h.row(0).iter().enumerate() {
            assert!((v - if j == 1 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        assert!(h.row(1).iter().all(|&v| v.abs() < 1e-15));
    }
}

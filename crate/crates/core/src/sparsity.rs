//! Hoyer's sparseness measure and the projection onto vectors with a
//! prescribed sparseness.

use crate::error::{Error, Result};

/// Iteration cap for [`project_sparseness`].
pub const MAX_PROJECTION_ITERS: usize = 200;
/// Coordinates at or below this value are treated as zero after a step.
const ZERO_TOL: f64 = 1e-13;

/// A target sparseness in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityTarget(f64);

impl SparsityTarget {
    /// `sigma = 0` is rejected: omit the target to express "no constraint".
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::arg(format!(
                "sparsity target must lie in (0, 1], got {sigma}"
            )));
        }
        Ok(Self(sigma))
    }

    pub fn sigma(self) -> f64 {
        self.0
    }

    /// The L1 norm a vector of length `p` and L2 norm `l2` must have to
    /// reach this sparseness.
    pub fn l1_for(self, p: usize, l2: f64) -> f64 {
        let sp = (p as f64).sqrt();
        l2 * (sp - (sp - 1.0) * self.0)
    }
}

/// `(sqrt(p) - |v|_1 / |v|_2) / (sqrt(p) - 1)`, in `[0, 1]`.
pub fn hoyer_sigma(v: &[f64]) -> Result<f64> {
    let p = v.len();
    if p < 2 {
        return Err(Error::arg(format!(
            "sparseness needs at least 2 coordinates, got {p}"
        )));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Err(Error::UndefinedInput(
            "sparseness of the zero vector".into(),
        ));
    }
    // equal magnitudes: l1/l2 = sqrt(p) analytically, but not in floating point
    let first = v[0].abs();
    if v.iter().all(|x| x.abs() == first) {
        return Ok(0.0);
    }
    let sp = (p as f64).sqrt();
    Ok(((sp - l1 / l2) / (sp - 1.0)).clamp(0.0, 1.0))
}

/// Projects `v` onto the non-negative vectors with the same L2 norm and
/// sparseness `target`.
pub fn project_sparseness(v: &[f64], target: SparsityTarget) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::arg("projection needs at least 2 coordinates"));
    }
    if !v.iter().any(|&x| x > 0.0) {
        return Err(Error::UndefinedInput(
            "projection needs a positive coordinate".into(),
        ));
    }
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    project_to_norms(v, target.l1_for(v.len(), l2), l2)
}

/// Closest non-negative vector to `s` with L1 norm `l1` and L2 norm `l2`.
///
/// Alternates between the hyperplane `sum = l1` and the sphere `|x|_2 = l2`
/// inside the current active set; coordinates that turn negative are fixed
/// at zero and the remaining ones re-centred, until the point is
/// non-negative. Ties resolve toward the lowest index.
pub fn project_to_norms(s: &[f64], l1: f64, l2: f64) -> Result<Vec<f64>> {
    let n = s.len();
    if n == 0 || !(l2 > 0.0) || !(l1 >= l2 - 1e-12 * l2) {
        return Err(Error::arg(format!(
            "infeasible norms l1={l1}, l2={l2} for length {n}"
        )));
    }
    let target_sq = l2 * l2;
    let mut active = vec![true; n];
    let mut n_active = n;
    let shift = (l1 - s.iter().sum::<f64>()) / n as f64;
    let mut v: Vec<f64> = s.iter().map(|x| x + shift).collect();

    for iter in 0..MAX_PROJECTION_ITERS {
        let mid = l1 / n_active as f64;
        let mut w: Vec<f64> = v
            .iter()
            .zip(&active)
            .map(|(&x, &a)| if a { x - mid } else { 0.0 })
            .collect();
        let mut a: f64 = w.iter().map(|x| x * x).sum();
        if a <= f64::EPSILON * target_sq {
            // v sits on the midpoint: step toward the first active coordinate
            let first = active.iter().position(|&a| a).expect("active set non-empty");
            for (j, wj) in w.iter_mut().enumerate() {
                if active[j] {
                    *wj = if j == first { 1.0 } else { 0.0 } - 1.0 / n_active as f64;
                }
            }
            a = w.iter().map(|x| x * x).sum();
            if a == 0.0 {
                // a single active coordinate: nothing left to move
                return finish(v, l1, l2);
            }
        }
        let b = 2.0 * w.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
        let c = v.iter().map(|x| x * x).sum::<f64>() - target_sq;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let alpha = (-b + disc.sqrt()) / (2.0 * a);
        for (x, d) in v.iter_mut().zip(&w) {
            *x += alpha * d;
        }

        if v.iter().all(|&x| x >= -ZERO_TOL * l2) {
            for x in v.iter_mut() {
                *x = x.max(0.0);
            }
            return finish(v, l1, l2);
        }

        for (x, a) in v.iter_mut().zip(active.iter_mut()) {
            if *x <= 0.0 {
                *x = 0.0;
                *a = false;
            }
        }
        n_active = active.iter().filter(|&&a| a).count();
        if n_active == 0 {
            return Err(Error::Numeric(format!(
                "sparseness projection emptied its active set at iteration {iter}"
            )));
        }
        let shift = (l1 - v.iter().sum::<f64>()) / n_active as f64;
        for (x, &a) in v.iter_mut().zip(&active) {
            if a {
                *x += shift;
            }
        }
    }
    Err(Error::Numeric(format!(
        "sparseness projection did not converge in {MAX_PROJECTION_ITERS} iterations \
         (length {n}, l1 {l1}, l2 {l2})"
    )))
}

fn finish(v: Vec<f64>, l1: f64, l2: f64) -> Result<Vec<f64>> {
    let got1: f64 = v.iter().sum();
    let got2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (got1 - l1).abs() > 1e-6 * l1.max(1e-300) || (got2 - l2).abs() > 1e-6 * l2 {
        return Err(Error::Numeric(format!(
            "sparseness projection landed at l1={got1}, l2={got2}; wanted l1={l1}, l2={l2}"
        )));
    }
    Ok(v)
}

mod common;

use morphdict::dataset::synthetic_strokes;
use morphdict::nmf::{
    column_sparsity, encode_offline, encode_pseudoinverse, factorize, objective, reconstruct,
    Factorization, NmfConfig,
};
use morphdict::{Dictionary, SparsityTarget};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn strokes(m: usize) -> Array2<f64> {
    synthetic_strokes("s", m, 10, 10, 4).to_matrix()
}

#[test]
fn sparse_factorization_invariants() {
    let x = strokes(60);
    let cfg = NmfConfig {
        k: 8,
        s_h: Some(SparsityTarget::new(0.6).unwrap()),
        max_iter: 60,
        seed: 1,
        ..NmfConfig::default()
    };
    let f = factorize(&x, &cfg).unwrap();
    assert_eq!(f.h().dim(), (60, 8));
    assert_eq!(f.w().dim(), (8, 100));
    assert!(f.h().iter().chain(f.w().iter()).all(|&v| v >= 0.0));
    let trace = f.objective_trace();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]), "objective increased");
    let last = *trace.last().unwrap();
    assert!((objective(&x, f.h(), f.w()) - last).abs() <= 1e-9 * last.max(1.0));
    for s in column_sparsity(f.h()) {
        assert!((s - 0.6).abs() < 1e-6, "column sparsity {s}");
    }
}

#[test]
fn same_seed_same_factors() {
    let x = strokes(30);
    let cfg = NmfConfig { k: 5, max_iter: 25, seed: 7, ..NmfConfig::default() };
    assert_eq!(factorize(&x, &cfg).unwrap(), factorize(&x, &cfg).unwrap());
}

#[test]
fn zero_input_is_degenerate() {
    let f = factorize(&Array2::zeros((4, 9)), &NmfConfig { k: 2, ..NmfConfig::default() }).unwrap();
    assert!(f.degenerate);
    assert!(f.h().iter().all(|&v| v == 0.0));
}

#[test]
fn reconstruct_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = Array2::from_shape_fn((7, 4), |_| rng.gen::<f64>());
    let w = Array2::from_shape_fn((4, 11), |_| rng.gen::<f64>());
    let got = reconstruct(&h, &w).unwrap();
    for i in 0..7 {
        for p in 0..11 {
            let mut s = 0.0;
            for j in 0..4 {
                s += h[[i, j]] * w[[j, p]];
            }
            assert!((got[[i, p]] - s).abs() < 1e-12);
        }
    }
    assert!(reconstruct(&h, &Array2::zeros((3, 11))).is_err());
}

#[test]
fn pseudoinverse_solves_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = Array2::from_shape_fn((5, 36), |_| rng.gen::<f64>());
    let dict = Dictionary::from_matrix(6, 6, w.clone()).unwrap();
    let set = synthetic_strokes("s", 6, 6, 6, 3);
    let h = encode_pseudoinverse(set.images(), &dict).unwrap();
    // residual orthogonal to every atom: (x - hW) W^T = 0
    let resid = set.to_matrix() - h.dot(&w);
    let g = resid.dot(&w.t());
    assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
}

#[test]
fn offline_codes_recover_planted_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = Array2::from_shape_fn((4, 25), |_| rng.gen_range(0.0..1.0));
    let dict = Dictionary::from_matrix(5, 5, w.clone()).unwrap();
    let planted = Array2::from_shape_vec((2, 4), vec![0.3, 0.0, 0.5, 0.1, 0.0, 0.2, 0.0, 0.4]).unwrap();
    let x = planted.dot(&w);
    let set = morphdict::ImageSet::from_matrix("p", 5, 5, &x).unwrap();
    let enc = encode_offline(set.images(), &dict, None, 5000, 1e-12).unwrap();
    let got = enc.matrix();
    for (a, b) in got.iter().zip(planted.iter()) {
        assert!((a - b).abs() < 1e-4, "{got:?}");
    }
    assert!(got.iter().all(|&v| v >= 0.0));
}

#[test]
fn container_round_trip_and_rejection() {
    let x = strokes(12);
    let f = factorize(&x, &NmfConfig { k: 3, max_iter: 5, ..NmfConfig::default() }).unwrap();
    let back = Factorization::from_bytes(&f.to_bytes()).unwrap();
    assert_eq!(back.h(), f.h());
    assert_eq!(back.w(), f.w());
    let mut bytes = f.to_bytes();
    bytes[0] = b'X';
    assert!(Factorization::from_bytes(&bytes).is_err());
    assert!(Factorization::from_bytes(&f.to_bytes()[..20]).is_err());
}

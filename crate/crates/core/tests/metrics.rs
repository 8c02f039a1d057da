mod common;

use morphdict::evaluation::{
    clip01, dilation_approx_error, dilation_approx_error_par, emit_report, mean_code_sparsity,
    parse_report, reconstruction_error, MetricsReport,
};
use morphdict::morphology::disk_se;
use morphdict::Dictionary;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Ten 8x8 images, codes over `k` atoms and a reconstruction that may
/// leave `[0, 1]`.
fn fixture(seed: u64, k: usize) -> (Array2<f64>, Array2<f64>, Dictionary, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((10, 64), |_| rng.gen::<f64>());
    let h = Array2::from_shape_fn((10, k), |_| {
        if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(0.0..0.8)
        }
    });
    let w = Array2::from_shape_fn((k, 64), |_| rng.gen_range(0.0..0.6));
    let recon = Array2::from_shape_fn((10, 64), |_| rng.gen_range(-0.2..1.3));
    (x, h, Dictionary::from_matrix(8, 8, w).unwrap(), recon)
}

#[test]
fn metrics_match_scalar_recomputation() {
    for seed in 0..20 {
        let k = 2 + (seed as usize % 7);
        let (x, h, dict, recon) = fixture(seed, k);
        let rec = reconstruction_error(&x, &clip01(&recon)).unwrap();
        let clipped: Vec<Vec<f64>> = rows(&recon)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .collect();
        assert!((rec - common::mse(&rows(&x), &clipped)).abs() <= 1e-12);

        let s = mean_code_sparsity(&h).unwrap();
        assert!((s - common::mean_sigma(&rows(&h))).abs() <= 1e-12);

        for r in [1.0, 1.5] {
            let se = disk_se(r).unwrap();
            let d = dilation_approx_error(&x, &h, &dict, &se).unwrap();
            let want = common::dilation_error(&rows(&x), &rows(&h), &rows(dict.matrix()), 8, 8, &common::ball(r));
            assert!((d - want).abs() <= 1e-12, "seed {seed} radius {r}: {d} vs {want}");
        }
    }
}

#[test]
fn worker_count_does_not_change_dilation_error() {
    let (x, h, dict, _) = fixture(7, 5);
    let se = disk_se(1.0).unwrap();
    let one = dilation_approx_error_par(&x, &h, &dict, &se, 1).unwrap();
    for w in [2, 3, 8, 64] {
        assert_eq!(one.to_bits(), dilation_approx_error_par(&x, &h, &dict, &se, w).unwrap().to_bits());
    }
}

#[test]
fn zero_rows_are_skipped_and_all_zero_is_undefined() {
    let mut h = Array2::zeros((3, 4));
    assert!(mean_code_sparsity(&h).is_err());
    h[[1, 2]] = 0.7;
    assert_eq!(mean_code_sparsity(&h).unwrap(), 1.0);
}

#[test]
fn shape_mismatches_are_errors() {
    let (x, _, dict, _) = fixture(1, 3);
    let se = disk_se(1.0).unwrap();
    assert!(reconstruction_error(&x, &Array2::zeros((10, 63))).is_err());
    assert!(dilation_approx_error(&x, &Array2::zeros((9, 3)), &dict, &se).is_err());
    assert!(dilation_approx_error(&x, &Array2::zeros((10, 4)), &dict, &se).is_err());
}

#[test]
fn report_round_trip() {
    let reports = vec![
        MetricsReport::new("sparse-nmf", "mnist", 100, 0.0112345678, 0.66, 0.012),
        MetricsReport::new("asymae", "mnist, \"quoted\"", 100, 7e-3, 0.54123456, 0.0689),
    ];
    let text = emit_report(&reports);
    assert!(text.starts_with("model,dataset,k,rec_error,code_sparsity,dilation_error\n"));
    let back = parse_report(&text).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].dataset, "mnist, \"quoted\"");
    assert_eq!(back[0].reconstruction_error, 0.0112346);
    assert_eq!(back[1].mean_code_sparsity, 0.541235);
    assert_eq!(emit_report(&back), text);
    assert!(parse_report("a,b\n1,2\n").is_err());
}

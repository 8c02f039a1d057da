use std::fs;
use std::path::Path;

use morphdict::cli::{run, EXIT_IO, EXIT_OK, EXIT_USAGE};
use morphdict::dataset::{synthetic_strokes, Split};
use morphdict::evaluation::parse_report;

fn write_split(dir: &Path, split: Split, count: usize, seed: u64) {
    let set = synthetic_strokes("fixture", count, 12, 12, seed);
    fs::write(dir.join(split.file_stems().0), set.to_idx_bytes()).unwrap();
}

/// A data directory with 64 training and 24 test images of 12x12.
fn data_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), Split::Train, 64, 1);
    write_split(dir.path(), Split::Test, 24, 2);
    dir
}

fn args(data: &Path, out: &Path, rest: &[&str]) -> Vec<String> {
    let mut v = vec![
        "morphdict".to_string(),
        "--out".into(),
        out.display().to_string(),
        "--seed".into(),
        "3".into(),
        "--set".into(),
        format!("data_dir={}", data.display()),
    ];
    v.extend(rest.iter().map(|s| s.to_string()));
    v
}

#[test]
fn nmf_pipeline_end_to_end() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let small = ["--set", "k=6", "--set", "max_iter=40"];
    let mut a = args(data.path(), out.path(), &small);
    a.push("train-nmf".into());
    assert_eq!(run(&a), EXIT_OK);

    let artifact = out.path().join("artifacts/sparse-nmf.mdic");
    let report = fs::read_to_string(out.path().join("reports/sparse-nmf.csv")).unwrap();
    let rows = parse_report(&report).unwrap();
    assert_eq!(rows[0].model, "sparse-nmf");
    assert_eq!(rows[0].k, 6);
    let trace = fs::read_to_string(out.path().join("trace/sparse-nmf.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective\n"));

    let a = args(data.path(), out.path(), &["eval", artifact.to_str().unwrap()]);
    assert_eq!(run(&a), EXIT_OK);
    // the stored codes cover the same split, so eval reproduces training
    let eval = fs::read_to_string(out.path().join("reports/sparse-nmf_eval.csv")).unwrap();
    assert_eq!(eval, report);

    let a = args(data.path(), out.path(), &["export-atoms", artifact.to_str().unwrap(), "--cols", "3"]);
    assert_eq!(run(&a), EXIT_OK);
    let pgm = fs::read(out.path().join("montages/sparse-nmf_atoms.pgm")).unwrap();
    // 2 rows x 3 cols of 12x12 tiles with 1-pixel separators
    assert!(pgm.starts_with(b"P5\n38 25\n255\n"));

    let a = args(data.path(), out.path(), &["approx-dilate", artifact.to_str().unwrap(), "--indices", "0,5"]);
    assert_eq!(run(&a), EXIT_OK);
    assert!(out.path().join("montages/sparse-nmf_dilate.pgm").exists());

    let a = args(data.path(), out.path(), &["approx-dilate", artifact.to_str().unwrap(), "--indices", "99"]);
    assert_eq!(run(&a), EXIT_USAGE);
}

#[test]
fn asymae_pipeline_end_to_end() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let a = args(
        data.path(),
        out.path(),
        &["--set", "k=5", "--set", "epochs=1", "--set", "batch_size=32", "--precision", "32", "train-asymae"],
    );
    assert_eq!(run(&a), EXIT_OK);
    let trace = fs::read_to_string(out.path().join("trace/asymae.csv")).unwrap();
    assert!(trace.starts_with("epoch,total,mse,penalty\n1,"));
    let artifact = out.path().join("artifacts/asymae.mnet");
    let a = args(data.path(), out.path(), &["eval", artifact.to_str().unwrap()]);
    assert_eq!(run(&a), EXIT_OK);
    let rows = parse_report(&fs::read_to_string(out.path().join("reports/asymae_eval.csv")).unwrap()).unwrap();
    assert_eq!((rows[0].model.as_str(), rows[0].k), ("asymae", 5));
}

#[test]
fn exit_codes() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("nope.mdic");
    assert_eq!(run(args(data.path(), out.path(), &["eval", missing.to_str().unwrap()])), EXIT_IO);

    let junk = out.path().join("junk.bin");
    fs::write(&junk, b"XXXX0000").unwrap();
    assert_eq!(run(args(data.path(), out.path(), &["eval", junk.to_str().unwrap()])), EXIT_IO);

    let a = args(data.path(), out.path(), &["approx-dilate", junk.to_str().unwrap()]);
    assert_eq!(run(a), EXIT_USAGE);

    assert_eq!(run(["morphdict", "train-asymae", "--set", "epochs=1"]), EXIT_USAGE);
    assert_eq!(run(["morphdict", "--set", "k", "train-nmf"]), EXIT_USAGE);
    assert_eq!(run(["morphdict", "--help"]), EXIT_OK);

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(run(args(empty.path(), out.path(), &["train-nmf"])), EXIT_IO);
}

#[test]
fn config_file_is_read() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# small run\ndata_dir = {}\nk = 4\nmax_iter = 10\nname = tiny\nseed = 9\n",
            data.path().display()
        ),
    )
    .unwrap();
    let code = run([
        "morphdict",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "train-nmf",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.path().join("reports/tiny.csv").exists());
}

//! Drives the command-line interface from code: a config file, a seeded
//! training run and an evaluation of the saved artifact, all under
//! out/examples/run. Same as
//!
//!     morphdict --config run.cfg train-nmf
//!     morphdict --config run.cfg eval out/examples/run/artifacts/demo.mdic
//!
//!     cargo run --release --example config_run

use std::fs;

use morphdict::cli::run;
use morphdict::dataset::{default_data_dir, synthetic_strokes, Split};

fn main() {
    let out = "out/examples/run";
    fs::create_dir_all(out).expect("create output directory");
    let mut data = default_data_dir();
    if !data.join(Split::Test.file_stems().0).exists() {
        data = format!("{out}/data").into();
        fs::create_dir_all(&data).expect("create data directory");
        let set = synthetic_strokes("synthetic", 300, 28, 28, 2);
        fs::write(data.join(Split::Test.file_stems().0), set.to_idx_bytes()).expect("write IDX");
    }
    let cfg = format!(
        "# a small, fully reproducible run\n\
         data_dir = {}\n\
         split = test\n\
         test_limit = 500\n\
         k = 25\n\
         s_h = 0.6\n\
         max_iter = 100\n\
         seed = 1\n\
         name = demo\n\
         out = {out}\n",
        data.display()
    );
    let cfg_path = format!("{out}/run.cfg");
    fs::write(&cfg_path, cfg).expect("write config");

    let code = run(["morphdict", "--config", &cfg_path, "train-nmf"]);
    println!("train-nmf exited with {code}");
    let artifact = format!("{out}/artifacts/demo.mdic");
    let code = run(["morphdict", "--config", &cfg_path, "eval", &artifact]);
    println!("eval exited with {code}");
    let code = run(["morphdict", "--config", &cfg_path, "export-atoms", &artifact, "--cols", "5"]);
    println!("export-atoms exited with {code}");
}

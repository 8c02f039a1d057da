//! Sparse NMF of an image set: objective trace, the three comparison
//! measures and a montage of the learned atoms.
//!
//!     cargo run --release --example sparse_nmf
//!
//! M (images, default 1000), K (atoms, 100), SH (code sparseness, 0.6) and
//! ITER (500) override the defaults. Writes out/examples/nmf_atoms.pgm.

mod common;

use morphdict::dataset::Split;
use morphdict::evaluation::{score, write_montage, ModelOutputs, TileScale};
use morphdict::morphology::disk_se;
use morphdict::nmf::{factorize_set, NmfConfig};
use morphdict::{Result, SparsityTarget};

fn main() -> Result<()> {
    let set = common::images(Split::Test, common::env_or("M", 1000));
    let cfg = NmfConfig {
        k: common::env_or("K", 100),
        s_h: Some(SparsityTarget::new(common::env_or("SH", 0.6))?),
        max_iter: common::env_or("ITER", 500),
        seed: 0,
        ..NmfConfig::default()
    };
    println!("{} images of {}x{}, k = {}", set.len(), set.height(), set.width(), cfg.k);
    let start = std::time::Instant::now();
    let fact = factorize_set(&set, &cfg)?;
    let trace = fact.objective_trace();
    println!(
        "{} iterations in {:.1?}: objective {:.2} after the first, {:.2} at the end{}",
        trace.len(),
        start.elapsed(),
        trace[0],
        trace[trace.len() - 1],
        if fact.converged { " (converged)" } else { "" }
    );

    let dict = fact.dictionary(set.height(), set.width())?;
    let recon = fact.h().dot(fact.w());
    let report = score(
        "sparse-nmf",
        set.name(),
        &set.to_matrix(),
        ModelOutputs {
            codes: fact.h(),
            reconstruction: &recon,
            dictionary: &dict,
        },
        &disk_se(1.0)?,
        1,
    )?;
    println!(
        "reconstruction {:.5}, code sparsity {:.3}, dilation error {:.5}",
        report.reconstruction_error, report.mean_code_sparsity, report.dilation_approx_error
    );
    let path = "out/examples/nmf_atoms.pgm";
    write_montage(path, &dict.atoms(), 10, TileScale::PerTile)?;
    println!("wrote {path}");
    Ok(())
}

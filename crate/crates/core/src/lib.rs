//! Non-negative, sparse, part-based dictionaries for image sets and the
//! part-based approximation of flat morphological operators.
//!
//! Two ways to learn a dictionary are provided:
//!
//! - [`nmf`]: offline sparse NMF with Hoyer sparseness constraints
//!   ([`sparsity`]).
//! - [`asymae`]: an online asymmetric auto-encoder (deep convolutional
//!   encoder, single non-negative linear decoder layer) built on the small
//!   hand-differentiated engine in [`neuralnet`].
//!
//! Either dictionary feeds [`morphology::dilate_dictionary`] and
//! [`morphology::part_based_apply`], and [`evaluation`] scores the result.
//! The `examples/` directory has one runnable program per capability and
//! the `morphdict` binary wires everything into reproducible runs.

use std::fs;
use std::io::Write;
use std::path::Path;

pub mod asymae;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod morphology;
pub mod neuralnet;
pub mod nmf;
pub mod sparsity;

pub use dataset::{GrayImage, ImageSet};
pub use error::{Error, Result};
pub use morphology::{Dictionary, Encoding, StructuringElement};
pub use sparsity::SparsityTarget;

/// Writes `bytes` to a temporary sibling of `path` and renames it into
/// place, so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.display().to_string();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{name} has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(name, e));
    }
    Ok(())
}

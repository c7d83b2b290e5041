//! Datasets: synthetic ground truth, binarized MNIST, the word codec, and the
//! on-disk formats for datasets and distribution tables.

mod codec;
mod dataset;
mod mnist;
mod synthetic;

pub use codec::{decode_bits, encode_word, load_wordlist, words_dataset, WORD_BITS, WORD_CHARS};
pub use dataset::{Dataset, Provenance};
pub use mnist::{load_idx_images, load_idx_labels, load_mnist_binary, IdxImages, MNIST_THRESHOLD};
pub use synthetic::{gen_synthetic, sample_from_table, DistributionTable, MAX_TABLE_BITS};

use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = match dir {
        Some(d) => d.join(format!(".{file_name}.tmp")),
        None => Path::new(&format!(".{file_name}.tmp")).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

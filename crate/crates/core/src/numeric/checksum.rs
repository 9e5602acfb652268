use sha2::{Digest, Sha256};

use super::DenseMatrix;

/// SHA-256 over the shapes and exact bit patterns of `parts`, as hex.
pub fn checksum<'a>(parts: impl IntoIterator<Item = &'a DenseMatrix>) -> String {
    let mut hasher = Sha256::new();
    for m in parts {
        hasher.update((m.rows() as u64).to_le_bytes());
        hasher.update((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

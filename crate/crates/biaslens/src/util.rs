//! Small shared helpers: atomic file writes and content digests.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Write `bytes` to `path` atomically: write to a temp file in the same
/// directory, then rename over the destination. Parent directories are
/// created if missing.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Hex-encoded SHA-256 over a sequence of byte chunks, separated by a NUL
/// byte so that chunk boundaries are unambiguous.
pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for (i, chunk) in chunks.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(chunk);
    }
    hex::encode(hasher.finalize())
}

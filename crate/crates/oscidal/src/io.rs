//! File plumbing shared by the cache, checkpoints, and CSV outputs.
//! All writes are atomic: content goes to a sibling temp file which is then
//! renamed over the destination, so partially written artifacts never exist
//! under their final name.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stamp = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".tmp-{}-{}-{}",
        std::process::id(),
        stamp,
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    let write_result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    })();
    if let Err(e) = write_result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// CSV conventions used everywhere: comma separator, `.` decimal point,
/// one header row, LF line endings. Floats are printed shortest-round-trip.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Shortest f64 formatting that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    let mut s = format!("{x}");
    // Keep a uniform "looks like a float" shape in CSV columns.
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Cache directory resolution: `OSCIDAL_CACHE_DIR` wins, otherwise a
/// subdirectory of the system temp dir.
pub fn cache_dir() -> PathBuf {
    match std::env::var_os("OSCIDAL_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => std::env::temp_dir().join("oscidal-cache"),
    }
}

/// Tagged binary vector format shared by the RHS cache and matrix dumps:
/// magic (4 bytes), format version (u32 LE), content-key hash (32 bytes),
/// value count (u64 LE), count * (re, im) as f64 LE pairs, then a SHA-256
/// digest of everything before it. The key hash identifies WHAT the file
/// holds; the trailing digest detects bit-rot in the payload itself.
pub fn write_tagged_complex(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
    hash: &[u8; 32],
    values: &[Complex64],
) -> Result<()> {
    let mut bytes = Vec::with_capacity(80 + 16 * values.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&version.to_le_bytes());
    bytes.extend_from_slice(hash);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    atomic_write(path, &bytes)
}

/// Read back a tagged complex vector. Returns None when the file is
/// missing, truncated, damaged, or fails magic/version/hash validation:
/// callers treat all of those as a cache miss, not an error.
pub fn read_tagged_complex(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
    hash: &[u8; 32],
) -> Option<Vec<Complex64>> {
    let bytes = fs::read(path).ok()?;
    if bytes.len() < 80 {
        return None;
    }
    if &bytes[0..4] != magic {
        return None;
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != version {
        return None;
    }
    if &bytes[8..40] != hash {
        return None;
    }
    let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    if bytes.len() != 80 + 16 * count {
        return None;
    }
    let body = &bytes[..48 + 16 * count];
    let digest = Sha256::digest(body);
    if digest.as_slice() != &bytes[48 + 16 * count..] {
        return None;
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let off = 48 + 16 * k;
        let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        values.push(Complex64::new(re, im));
    }
    Some(values)
}

//! Shared file-output helpers: round-trip-safe decimal formatting for
//! checkpoint reals and atomic writes (temp file + rename, so readers never
//! observe partial files).

use std::fs;
use std::io;
use std::path::Path;

/// Formats an `f64` with 17 significant decimal digits, enough to
/// reconstruct the value bit-exactly on parse.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` atomically: the bytes land in a sibling
/// temp file first and are renamed into place.
pub fn atomic_write(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp = path.to_path_buf();
    tmp.set_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

//! Output plumbing: fixed-precision number formatting and atomic file
//! emission (write to a sibling temp file, then rename), so failures never
//! leave a partial output behind.

use std::io::Write;
use std::path::Path;

/// A number printed to 12 significant digits, in scientific notation so the
/// precision is explicit.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Write `content` to `out`, or to stdout when no path is given. File writes
/// go through a temp file in the same directory followed by a rename.
pub fn emit(out: Option<&Path>, content: &str) -> std::io::Result<()> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()
        }
        Some(path) => {
            let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
            tmp_name.push(".tmp~");
            let tmp = path.with_file_name(tmp_name);
            std::fs::write(&tmp, content)?;
            std::fs::rename(&tmp, path)
        }
    }
}

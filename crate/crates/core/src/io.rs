//! Output files: every table carries a provenance header and lands via write-then-rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{AfcError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header lines naming the scenario and library version.
pub fn provenance_header(scenario_hash: &str) -> String {
    format!("# scenario_sha256 {scenario_hash}\n# afc_core_version {VERSION}\n")
}

/// Writes `contents` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| AfcError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| AfcError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| AfcError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AfcError::io(path, e))?;
    tmp.persist(path).map_err(|e| AfcError::io(path, e.error))?;
    Ok(())
}

/// Writes a table with the provenance header prepended.
pub fn write_table(path: &Path, scenario_hash: &str, body: &str) -> Result<()> {
    write_atomic(path, &(provenance_header(scenario_hash) + body))
}

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "AFC_OUTPUT_ROOT";

pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.dat");
        write_table(&path, "abc", "1 2\n").unwrap();
        write_table(&path, "abc", "3 4\n").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# scenario_sha256 abc\n"));
        assert!(text.ends_with("3 4\n"));
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}

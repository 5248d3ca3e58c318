use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::UsageError;

pub const CONFIG_ARCHIVE: &str = "run_config.toml";

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating a temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("input file {} does not exist", path.display())).into());
    }
    Ok(())
}

pub fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| UsageError(format!("cannot create {}: {e}", dir.display())))?;
    Ok(())
}

/// Refuses outputs that would overwrite one of the inputs.
pub fn check_distinct(output: &Path, inputs: &[&Path]) -> anyhow::Result<()> {
    let out = absolute(output);
    for input in inputs {
        if absolute(input) == out {
            return Err(UsageError(format!("output {} would overwrite an input", output.display())).into());
        }
    }
    Ok(())
}

fn absolute(path: &Path) -> PathBuf {
    if let Ok(p) = path.canonicalize() {
        return p;
    }
    // The file may not exist yet; resolve its parent instead.
    match (path.parent(), path.file_name()) {
        (Some(parent), Some(name)) => {
            let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
            parent.canonicalize().map_or_else(|_| path.to_path_buf(), |p| p.join(name))
        }
        _ => path.to_path_buf(),
    }
}

/// Stores the fully resolved config next to a command's outputs.
pub fn archive_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    write_text(&dir.join(CONFIG_ARCHIVE), &cfg.to_toml()?)
}

/// Archive path for a single-file output: `<file>.run_config.toml`.
pub fn archive_path_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(CONFIG_ARCHIVE);
    file.with_file_name(name)
}

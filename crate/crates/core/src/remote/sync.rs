//! Incremental, mtime-preserving file transfer built on `tar` streams.
//!
//! A push lists the remote tree (size and whole-second mtime per file) and
//! sends only the local files that are missing or differ. A pull copies one
//! remote directory back whole, replacing the local one.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::UNIX_EPOCH;

use super::transport::{run_process, Transport};
use super::RemoteError;
use crate::shell;

/// File size and mtime in whole seconds.
pub type Manifest = BTreeMap<PathBuf, (u64, i64)>;

fn excluded(rel: &Path, excludes: &[PathBuf]) -> bool {
    excludes.iter().any(|e| rel.starts_with(e))
}

pub(crate) fn local_manifest(root: &Path, excludes: &[PathBuf]) -> io::Result<Manifest> {
    let mut out = Manifest::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in fs::read_dir(root.join(&rel))? {
            let entry = entry?;
            let rel = rel.join(entry.file_name());
            if excluded(&rel, excludes) {
                continue;
            }
            let kind = entry.file_type()?;
            if kind.is_dir() {
                stack.push(rel);
            } else if kind.is_file() {
                let meta = entry.metadata()?;
                let mtime = meta
                    .modified()?
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs() as i64);
                out.insert(rel, (meta.len(), mtime));
            }
        }
    }
    Ok(out)
}

/// Parses NUL-separated `find -printf '%s %T@ %P\0'` records into a
/// manifest; malformed records are skipped.
pub fn parse_find_output(bytes: &[u8]) -> Manifest {
    let mut out = Manifest::new();
    for record in bytes.split(|b| *b == 0).filter(|r| !r.is_empty()) {
        let mut parts = record.splitn(3, |b| *b == b' ');
        let (Some(size), Some(mtime), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let size = std::str::from_utf8(size).ok().and_then(|s| s.parse().ok());
        let mtime = std::str::from_utf8(mtime)
            .ok()
            .and_then(|s| s.split('.').next())
            .and_then(|s| s.parse().ok());
        if let (Some(size), Some(mtime)) = (size, mtime) {
            out.insert(PathBuf::from(std::ffi::OsStr::from_bytes(path)), (size, mtime));
        }
    }
    out
}

fn remote_manifest(t: &dyn Transport, remote_root: &str) -> Result<Manifest, RemoteError> {
    let script = format!(
        "if [ -d {r} ]; then cd {r} && find . -type f -printf '%s %T@ %P\\0'; fi",
        r = shell::quote(remote_root)
    );
    let out = super::checked(t, &script, b"")?;
    Ok(parse_find_output(&out.stdout))
}

/// Sends the files under `local_root` that differ from `remote_root`.
/// Returns how many files were sent. Remote files are never deleted.
pub fn push(t: &dyn Transport, local_root: &Path, remote_root: &str, excludes: &[PathBuf]) -> Result<usize, RemoteError> {
    let local = local_manifest(local_root, excludes).map_err(|e| RemoteError::io(local_root, e))?;
    let remote = remote_manifest(t, remote_root)?;
    let changed: Vec<&PathBuf> = local
        .iter()
        .filter(|(path, meta)| remote.get(*path) != Some(meta))
        .map(|(path, _)| path)
        .collect();
    let mkdir = format!("mkdir -p {}", shell::quote(remote_root));
    if changed.is_empty() {
        super::checked(t, &mkdir, b"")?;
        return Ok(0);
    }
    let mut list = Vec::new();
    for path in &changed {
        list.extend_from_slice(path.as_os_str().as_bytes());
        list.push(0);
    }
    let mut tar = Command::new("tar");
    tar.arg("-cf").arg("-").arg("-C").arg(local_root).args(["--null", "-T", "-"]);
    let archive = run_process(tar, &list).map_err(|e| RemoteError::io(local_root, e))?;
    if !archive.success() {
        return Err(RemoteError::Local {
            command: format!("tar -cf - -C {}", local_root.display()),
            stderr: archive.stderr_text(),
        });
    }
    let script = format!("{mkdir} && cd {} && tar -xf -", shell::quote(remote_root));
    super::checked(t, &script, &archive.stdout)?;
    Ok(changed.len())
}

/// Replaces `local_dir` with a copy of `remote_dir`.
pub fn pull_dir(t: &dyn Transport, remote_dir: &str, local_dir: &Path) -> Result<(), RemoteError> {
    let script = format!("cd {} && tar -cf - .", shell::quote(remote_dir));
    let archive = super::checked(t, &script, b"")?;
    let name = local_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let staging = local_dir.with_file_name(format!(".{name}.automan-pull"));
    let io_err = |e| RemoteError::io(&staging, e);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err)?;
    }
    fs::create_dir_all(&staging).map_err(io_err)?;
    let mut tar = Command::new("tar");
    tar.arg("-xf").arg("-").arg("-C").arg(&staging);
    let out = run_process(tar, &archive.stdout).map_err(io_err)?;
    if !out.success() {
        let _ = fs::remove_dir_all(&staging);
        return Err(RemoteError::Local {
            command: format!("tar -xf - -C {}", staging.display()),
            stderr: out.stderr_text(),
        });
    }
    if local_dir.exists() {
        fs::remove_dir_all(local_dir).map_err(|e| RemoteError::io(local_dir, e))?;
    }
    fs::rename(&staging, local_dir).map_err(|e| RemoteError::io(local_dir, e))
}

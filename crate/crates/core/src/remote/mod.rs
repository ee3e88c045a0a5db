//! SSH workers: adding hosts, updating their sources, and running jobs on
//! them.
//!
//! A remote host mirrors the project under its `remote_root`. Setup and
//! update steps live in `.automan/bootstrap.sh` and `.automan/update.sh`,
//! generated on first use and free to edit afterwards; both run from the
//! remote root after the project files are pushed.

mod backend;
pub mod sync;
mod transport;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::config::{self, ConfigError, WorkerConfig, WorkerKind};
use crate::shell;

pub use backend::RemoteBackend;
pub use transport::{ExecOutput, LoopbackTransport, SshTransport, Transport};

pub const BOOTSTRAP_DIR: &str = ".automan";
pub const BOOTSTRAP_SCRIPT: &str = "bootstrap.sh";
pub const UPDATE_SCRIPT: &str = "update.sh";
pub const DEFAULT_REMOTE_ROOT: &str = "automan";

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("cannot run `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("`{command}` failed with {}:\n{stderr}", code_text(.code))]
    Command {
        command: String,
        code: Option<i32>,
        stderr: String,
    },
    #[error("`{command}` failed:\n{stderr}")]
    Local { command: String, stderr: String },
    #[error("{host}: connection lost")]
    ConnectionLost { host: String },
    #[error("copy-back failed: {0}")]
    CopyBack(Box<RemoteError>),
    #[error("bootstrap on {host} exited with {}\n--- stdout ---\n{stdout}--- stderr ---\n{stderr}", code_text(.code))]
    Bootstrap {
        host: String,
        code: Option<i32>,
        stdout: String,
        stderr: String,
    },
    #[error("{} is not inside the project directory", .0.display())]
    OutsideProject(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn code_text(code: &Option<i32>) -> String {
    match code {
        Some(c) => format!("exit code {c}"),
        None => "a signal".to_string(),
    }
}

impl RemoteError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Runs `script`, turning a nonzero exit into an error that names the
/// command that failed.
pub(crate) fn checked(t: &dyn Transport, script: &str, stdin: &[u8]) -> Result<ExecOutput, RemoteError> {
    let out = t.exec(script, stdin).map_err(|source| RemoteError::Spawn {
        command: t.describe(script),
        source,
    })?;
    if out.success() {
        Ok(out)
    } else {
        Err(RemoteError::Command {
            command: t.describe(script),
            code: out.code,
            stderr: out.stderr_text(),
        })
    }
}

/// The local side of a campaign: its root directory and the paths, relative
/// to it, that are never pushed (the simulation and output trees).
#[derive(Debug, Clone)]
pub struct Project {
    pub root: PathBuf,
    pub excludes: Vec<PathBuf>,
}

impl Project {
    pub fn new(root: impl Into<PathBuf>, excludes: Vec<PathBuf>) -> Self {
        Self {
            root: root.into(),
            excludes,
        }
    }

    pub fn bootstrap_dir(&self) -> PathBuf {
        self.root.join(BOOTSTRAP_DIR)
    }
}

/// A configured SSH worker and the transport used to reach it.
#[derive(Clone)]
pub struct RemoteHost {
    config: WorkerConfig,
    transport: Arc<dyn Transport>,
}

impl RemoteHost {
    pub fn new(config: WorkerConfig, transport: Arc<dyn Transport>) -> Self {
        Self { config, transport }
    }

    /// Reaches the worker through `ssh`.
    pub fn ssh(config: WorkerConfig) -> Self {
        let dest = config.destination().unwrap_or_else(|| config.name.clone());
        Self::new(config, Arc::new(SshTransport::new(dest)))
    }

    pub fn config(&self) -> &WorkerConfig {
        &self.config
    }

    pub fn remote_root(&self) -> &str {
        self.config.remote_root.as_deref().unwrap_or(DEFAULT_REMOTE_ROOT)
    }

    pub fn transport(&self) -> &dyn Transport {
        self.transport.as_ref()
    }

    /// Pushes the project files that changed since the last push.
    pub fn push(&self, project: &Project) -> Result<usize, RemoteError> {
        sync::push(self.transport(), &project.root, self.remote_root(), &project.excludes)
    }

    fn run_hook(&self, script: &str) -> Result<ExecOutput, RemoteError> {
        let cmd = format!(
            "cd {} && sh {}",
            shell::quote(self.remote_root()),
            shell::quote(&format!("{BOOTSTRAP_DIR}/{script}"))
        );
        self.transport.exec(&cmd, b"").map_err(|source| RemoteError::Spawn {
            command: self.transport.describe(&cmd),
            source,
        })
    }
}

pub fn bootstrap_template(commands: &[String]) -> String {
    let list: Vec<String> = commands.iter().map(|c| shell::quote(c)).collect();
    format!(
        r#"#!/bin/sh
# Prepares this host for the campaign. Runs from the remote root after the
# project files are copied. Edit freely; automan does not overwrite it.
set -e
for cmd in {}; do
    if ! command -v "$cmd" >/dev/null 2>&1; then
        echo "command not found: $cmd" >&2
        exit 1
    fi
done
"#,
        list.join(" ")
    )
}

pub fn update_template() -> String {
    r#"#!/bin/sh
# Runs from the remote root after each source update (automan -u).
set -e
"#
    .to_string()
}

/// Writes the bootstrap and update scripts unless they already exist.
pub fn write_templates(project: &Project, commands: &[String]) -> Result<(), RemoteError> {
    let dir = project.bootstrap_dir();
    fs::create_dir_all(&dir).map_err(|e| RemoteError::io(&dir, e))?;
    for (name, text) in [(BOOTSTRAP_SCRIPT, bootstrap_template(commands)), (UPDATE_SCRIPT, update_template())] {
        let path = dir.join(name);
        if !path.exists() {
            fs::write(&path, text).map_err(|e| RemoteError::io(&path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct AddHostOptions {
    /// Worker name; defaults to the host name.
    pub name: Option<String>,
    pub user: Option<String>,
    /// Defaults to [`DEFAULT_REMOTE_ROOT`], relative to the remote home.
    pub remote_root: Option<String>,
    /// Overrides the processor count read from the host.
    pub cores: Option<u32>,
    /// Programs the generated bootstrap script checks for.
    pub check_commands: Vec<String>,
}

fn remote_cores(host: &RemoteHost) -> Result<u32, RemoteError> {
    let script = "getconf _NPROCESSORS_ONLN 2>/dev/null || nproc";
    let out = checked(host.transport(), script, b"")?;
    out.stdout_text()
        .trim()
        .parse::<u32>()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| RemoteError::Command {
            command: host.transport().describe(script),
            code: out.code,
            stderr: format!("unexpected processor count {:?}", out.stdout_text()),
        })
}

/// Sets up `host` as a worker: checks it is reachable without a prompt,
/// pushes the project, runs the bootstrap script and records the worker in
/// `cfg_path`. The configuration is only written if every step succeeds.
pub fn add_host(
    host: &str,
    opts: &AddHostOptions,
    project: &Project,
    cfg_path: &Path,
    transport: Option<Arc<dyn Transport>>,
) -> Result<WorkerConfig, RemoteError> {
    let name = opts.name.clone().unwrap_or_else(|| host.to_string());
    let existing = config::ClusterConfig::load(cfg_path)?;
    if existing.worker(&name).is_some() {
        return Err(ConfigError::AlreadyConfigured(name).into());
    }
    let remote_root = opts.remote_root.clone().unwrap_or_else(|| DEFAULT_REMOTE_ROOT.to_string());
    let mut worker = WorkerConfig::ssh(name.clone(), host, opts.user.clone(), remote_root, 1);
    let remote = match transport {
        Some(t) => RemoteHost::new(worker.clone(), t),
        None => RemoteHost::ssh(worker.clone()),
    };

    checked(remote.transport(), "true", b"")?;
    write_templates(project, &opts.check_commands)?;
    let sent = remote.push(project)?;
    log::info!("{name}: pushed {sent} files to {}", remote.remote_root());
    let out = remote.run_hook(BOOTSTRAP_SCRIPT)?;
    if !out.success() {
        return Err(RemoteError::Bootstrap {
            host: name,
            code: out.code,
            stdout: out.stdout_text(),
            stderr: out.stderr_text(),
        });
    }
    worker.cores = match opts.cores {
        Some(c) => c,
        None => remote_cores(&remote)?,
    };

    let added = worker.clone();
    config::update(cfg_path, move |cfg| {
        if cfg.worker(&worker.name).is_some() {
            return Err(ConfigError::AlreadyConfigured(worker.name.clone()));
        }
        cfg.workers.push(worker);
        Ok(())
    })?;
    Ok(added)
}

/// Pushes the project to every host and runs its update script, all hosts
/// concurrently. One host failing does not stop the others.
pub fn update_sources(hosts: &[RemoteHost], project: &Project) -> Vec<(String, Result<(), RemoteError>)> {
    thread::scope(|s| {
        let handles: Vec<_> = hosts
            .iter()
            .map(|h| {
                s.spawn(move || {
                    h.push(project)?;
                    let out = h.run_hook(UPDATE_SCRIPT)?;
                    if out.success() {
                        Ok(())
                    } else {
                        Err(RemoteError::Command {
                            command: format!("{BOOTSTRAP_DIR}/{UPDATE_SCRIPT}"),
                            code: out.code,
                            stderr: out.stderr_text(),
                        })
                    }
                })
            })
            .collect();
        hosts
            .iter()
            .zip(handles)
            .map(|(h, handle)| (h.config.name.clone(), handle.join().expect("update thread panicked")))
            .collect()
    })
}

/// Remote hosts of the enabled SSH workers in `cfg`.
pub fn ssh_hosts(cfg: &config::ClusterConfig) -> Vec<RemoteHost> {
    cfg.workers
        .iter()
        .filter(|w| w.kind == WorkerKind::Ssh && w.enabled)
        .map(|w| RemoteHost::ssh(w.clone()))
        .collect()
}

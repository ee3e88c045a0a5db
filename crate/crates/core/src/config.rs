//! Worker configuration, stored as `config.json`:
//!
//! ```json
//! {"workers": [{"name": "localhost", "kind": "local", "cores": 4, "enabled": true},
//!              {"name": "node1", "kind": "ssh", "host": "node1", "user": "me",
//!               "remote_root": "automan", "cores": 8, "enabled": true}]}
//! ```

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_FILE: &str = "config.json";
pub const LOCAL_WORKER: &str = "localhost";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid worker configuration: {0}")]
    Invalid(String),
    #[error("worker `{0}` is already configured")]
    AlreadyConfigured(String),
    #[error("timed out waiting for lock {0}")]
    Locked(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerKind {
    Local,
    Ssh,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    pub name: String,
    pub kind: WorkerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_root: Option<String>,
    pub cores: u32,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

impl WorkerConfig {
    pub fn local(cores: u32) -> Self {
        Self {
            name: LOCAL_WORKER.to_string(),
            kind: WorkerKind::Local,
            host: None,
            user: None,
            remote_root: None,
            cores,
            enabled: true,
        }
    }

    pub fn ssh(name: impl Into<String>, host: impl Into<String>, user: Option<String>, remote_root: impl Into<String>, cores: u32) -> Self {
        Self {
            name: name.into(),
            kind: WorkerKind::Ssh,
            host: Some(host.into()),
            user,
            remote_root: Some(remote_root.into()),
            cores,
            enabled: true,
        }
    }

    /// `user@host` or `host`, as passed to ssh.
    pub fn destination(&self) -> Option<String> {
        let host = self.host.as_deref()?;
        Some(match &self.user {
            Some(u) if !u.is_empty() => format!("{u}@{host}"),
            _ => host.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub workers: Vec<WorkerConfig>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let cores = thread::available_parallelism().map_or(1, |n| n.get() as u32);
        Self {
            workers: vec![WorkerConfig::local(cores)],
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let locals = self.workers.iter().filter(|w| w.kind == WorkerKind::Local).count();
        if locals != 1 {
            return Err(ConfigError::Invalid(format!("expected exactly one local worker, found {locals}")));
        }
        let mut names = HashSet::new();
        for w in &self.workers {
            if w.name.is_empty() {
                return Err(ConfigError::Invalid("worker with empty name".into()));
            }
            if !names.insert(w.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate worker name `{}`", w.name)));
            }
            if w.cores == 0 {
                return Err(ConfigError::Invalid(format!("worker `{}` has zero cores", w.name)));
            }
            if w.kind == WorkerKind::Ssh {
                if w.host.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid(format!("ssh worker `{}` has no host", w.name)));
                }
                if w.remote_root.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid(format!("ssh worker `{}` has no remote_root", w.name)));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ClusterConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the default single local worker when it does not exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, path),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(ConfigError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialization");
        s.push('\n');
        s
    }

    pub fn worker(&self, name: &str) -> Option<&WorkerConfig> {
        self.workers.iter().find(|w| w.name == name)
    }

    pub fn local(&self) -> &WorkerConfig {
        self.workers.iter().find(|w| w.kind == WorkerKind::Local).expect("validated config has a local worker")
    }

    /// Largest core count among enabled workers.
    pub fn max_capacity(&self) -> u32 {
        self.workers.iter().filter(|w| w.enabled).map(|w| w.cores).max().unwrap_or(0)
    }
}

/// Exclusive lock on the config file, held through a sibling `.lock` file.
pub struct ConfigLock {
    path: PathBuf,
}

impl ConfigLock {
    pub fn acquire(config_path: &Path, timeout: Duration) -> Result<Self, ConfigError> {
        let mut lock = config_path.as_os_str().to_owned();
        lock.push(".lock");
        let path = PathBuf::from(lock);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| ConfigError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let deadline = Instant::now() + timeout;
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(Self { path }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if Instant::now() >= deadline {
                        return Err(ConfigError::Locked(path));
                    }
                    thread::sleep(Duration::from_millis(20));
                }
                Err(source) => return Err(ConfigError::Io { path, source }),
            }
        }
    }
}

impl Drop for ConfigLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes `cfg` to `path` atomically. The caller should hold a [`ConfigLock`].
pub fn save(cfg: &ClusterConfig, path: &Path) -> Result<(), ConfigError> {
    cfg.validate()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io_err = |source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, cfg.to_json()).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Loads, applies `edit`, and saves under the config lock. Nothing is
/// written when `edit` fails.
pub fn update<T>(
    path: &Path,
    edit: impl FnOnce(&mut ClusterConfig) -> Result<T, ConfigError>,
) -> Result<T, ConfigError> {
    let _lock = ConfigLock::acquire(path, Duration::from_secs(30))?;
    let mut cfg = ClusterConfig::load(path)?;
    let out = edit(&mut cfg)?;
    save(&cfg, path)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_gives_single_local_worker() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ClusterConfig::load(&tmp.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(cfg.workers.len(), 1);
        assert_eq!(cfg.local().kind, WorkerKind::Local);
        assert!(cfg.local().cores >= 1);
    }

    #[test]
    fn parses_documented_layout() {
        let text = r#"{"workers": [{"name": "localhost", "kind": "local", "cores": 4, "enabled": true},
            {"name": "node1", "kind": "ssh", "host": "node1", "user": "me", "remote_root": "automan", "cores": 8, "enabled": false}]}"#;
        let cfg = ClusterConfig::parse(text, Path::new("c")).unwrap();
        assert_eq!(cfg.workers[1].destination().unwrap(), "me@node1");
        assert!(!cfg.workers[1].enabled);
        assert_eq!(cfg.max_capacity(), 4);
        let again = ClusterConfig::parse(&cfg.to_json(), Path::new("c")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn enabled_defaults_to_true() {
        let cfg = ClusterConfig::parse(r#"{"workers": [{"name": "l", "kind": "local", "cores": 2}]}"#, Path::new("c")).unwrap();
        assert!(cfg.workers[0].enabled);
    }

    #[test]
    fn invalid_configs() {
        let cases = [
            r#"{"workers": []}"#,
            r#"{"workers": [{"name": "a", "kind": "local", "cores": 1}, {"name": "b", "kind": "local", "cores": 1}]}"#,
            r#"{"workers": [{"name": "a", "kind": "local", "cores": 1}, {"name": "a", "kind": "ssh", "host": "h", "remote_root": "r", "cores": 1}]}"#,
            r#"{"workers": [{"name": "a", "kind": "local", "cores": 0}]}"#,
            r#"{"workers": [{"name": "a", "kind": "local", "cores": 1}, {"name": "b", "kind": "ssh", "cores": 1}]}"#,
            r#"{"workers": [{"name": "a", "kind": "gpu", "cores": 1}]}"#,
            r#"{"workers": [{"name": "a", "kind": "local", "cores": 1, "extra": 1}]}"#,
            "not json",
        ];
        for c in cases {
            assert!(ClusterConfig::parse(c, Path::new("c")).is_err(), "{c}");
        }
    }

    #[test]
    fn failed_edit_leaves_file_untouched() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(CONFIG_FILE);
        update(&path, |cfg| {
            cfg.workers[0].cores = 3;
            Ok(())
        })
        .unwrap();
        let before = fs::read_to_string(&path).unwrap();
        let r: Result<(), _> = update(&path, |cfg| {
            cfg.workers[0].cores = 9;
            Err(ConfigError::Invalid("nope".into()))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_to_string(&path).unwrap(), before);
        assert!(!tmp.path().join("config.json.lock").exists());
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(CONFIG_FILE);
        let held = ConfigLock::acquire(&path, Duration::from_millis(10)).unwrap();
        assert!(matches!(ConfigLock::acquire(&path, Duration::from_millis(50)), Err(ConfigError::Locked(_))));
        drop(held);
        ConfigLock::acquire(&path, Duration::from_millis(10)).unwrap();
    }
}

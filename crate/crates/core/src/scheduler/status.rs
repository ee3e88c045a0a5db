//! `job_status.json`, the persistent record of one job's lifecycle.
//!
//! The on-disk layout is fixed:
//!
//! ```text
//! {"status": "done", "exit_code": 0, "start": "...", "end": "...", "command": "...", "worker": "..."}
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, SecondsFormat, SubsecRound, Utc};
use serde::Deserialize;
use thiserror::Error;

pub const STATUS_FILE: &str = "job_status.json";
pub const STDOUT_FILE: &str = "stdout.txt";
pub const STDERR_FILE: &str = "stderr.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Running,
    Done,
    Failed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Running => "running",
            Phase::Done => "done",
            Phase::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Phase::Running
    }
}

#[derive(Debug, Error)]
pub enum StatusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed job status: {0}")]
    Malformed(String),
}

/// Current time at the precision the record stores.
fn now_millis() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobStatus {
    pub phase: Phase,
    pub exit_code: Option<i32>,
    pub start: DateTime<Utc>,
    pub end: Option<DateTime<Utc>>,
    pub command: String,
    pub worker: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    status: String,
    exit_code: Option<i32>,
    start: String,
    end: Option<String>,
    command: String,
    worker: String,
}

fn timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Parses an RFC 3339 timestamp, truncated to the milliseconds that are
/// written back.
fn parse_time(s: &str) -> Result<DateTime<Utc>, StatusError> {
    let t = DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc).trunc_subsecs(3))
        .map_err(|e| StatusError::Malformed(format!("bad timestamp `{s}`: {e}")))?;
    if !(1..=9999).contains(&t.year()) {
        return Err(StatusError::Malformed(format!("timestamp `{s}` out of range")));
    }
    Ok(t)
}

impl JobStatus {
    pub fn running(command: impl Into<String>, worker: impl Into<String>) -> Self {
        Self {
            phase: Phase::Running,
            exit_code: None,
            start: now_millis(),
            end: None,
            command: command.into(),
            worker: worker.into(),
        }
    }

    /// Terminal record for an exit code; `None` means the process never
    /// produced one (spawn failure, lost connection, signal).
    pub fn finished(&self, exit_code: Option<i32>) -> Self {
        let phase = if exit_code == Some(0) { Phase::Done } else { Phase::Failed };
        Self {
            phase,
            exit_code,
            end: Some(now_millis()),
            ..self.clone()
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn to_json(&self) -> String {
        let s = |v: &str| serde_json::to_string(v).expect("string serialization");
        format!(
            "{{\"status\": {}, \"exit_code\": {}, \"start\": {}, \"end\": {}, \"command\": {}, \"worker\": {}}}\n",
            s(self.phase.as_str()),
            self.exit_code.map_or("null".to_string(), |c| c.to_string()),
            s(&timestamp(&self.start)),
            self.end.as_ref().map_or("null".to_string(), |t| s(&timestamp(t))),
            s(&self.command),
            s(&self.worker),
        )
    }

    /// Parses and validates a record: `done` iff exit code 0, and an end
    /// time iff the job is no longer running.
    pub fn parse(text: &str) -> Result<Self, StatusError> {
        let raw: Raw = serde_json::from_str(text).map_err(|e| StatusError::Malformed(e.to_string()))?;
        let phase = match raw.status.as_str() {
            "running" => Phase::Running,
            "done" => Phase::Done,
            "failed" => Phase::Failed,
            other => return Err(StatusError::Malformed(format!("unknown status `{other}`"))),
        };
        if (phase == Phase::Done) != (raw.exit_code == Some(0)) {
            return Err(StatusError::Malformed(format!(
                "status `{}` inconsistent with exit code {:?}",
                raw.status, raw.exit_code
            )));
        }
        if phase.is_terminal() != raw.end.is_some() {
            return Err(StatusError::Malformed(format!("status `{}` inconsistent with end time", raw.status)));
        }
        if phase == Phase::Running && raw.exit_code.is_some() {
            return Err(StatusError::Malformed("running job with an exit code".into()));
        }
        Ok(Self {
            phase,
            exit_code: raw.exit_code,
            start: parse_time(&raw.start)?,
            end: raw.end.as_deref().map(parse_time).transpose()?,
            command: raw.command,
            worker: raw.worker,
        })
    }

    /// Reads `dir/job_status.json`; `Ok(None)` when there is no record.
    pub fn read(dir: &Path) -> Result<Option<Self>, StatusError> {
        let path = dir.join(STATUS_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StatusError::Io { path, source }),
        }
    }

    /// Writes `dir/job_status.json` atomically (temp file + rename).
    pub fn write(&self, dir: &Path) -> Result<(), StatusError> {
        let path = dir.join(STATUS_FILE);
        let tmp = dir.join(format!(".{STATUS_FILE}.tmp"));
        let io_err = |source| StatusError::Io { path: path.clone(), source };
        fs::create_dir_all(dir).map_err(io_err)?;
        fs::write(&tmp, self.to_json()).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)
    }
}

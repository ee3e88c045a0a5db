use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{checked, sync, RemoteError, RemoteHost};
use crate::scheduler::{Backend, Job, JobStatus, STATUS_FILE, STDERR_FILE, STDOUT_FILE};
use crate::shell;

const EXIT_TAG: &str = "automan-exit:";

/// Runs jobs on a [`RemoteHost`].
///
/// The job's output directory, taken relative to the project root, is
/// recreated under the host's remote root and the command runs from the
/// remote root. Absolute paths into the project in the command or its
/// environment are rewritten to be relative. Once the job ends, its
/// terminal status is written remotely and the whole directory is copied
/// back over the local one.
pub struct RemoteBackend {
    host: RemoteHost,
    project_root: PathBuf,
}

impl RemoteBackend {
    pub fn new(host: RemoteHost, project_root: impl Into<PathBuf>) -> Self {
        Self {
            host,
            project_root: project_root.into(),
        }
    }

    fn relative_dir(&self, dir: &Path) -> Result<String, RemoteError> {
        let rel = if dir.is_absolute() {
            dir.strip_prefix(&self.project_root)
                .map_err(|_| RemoteError::OutsideProject(dir.to_path_buf()))?
        } else {
            dir
        };
        let text = rel.to_str().ok_or_else(|| RemoteError::OutsideProject(dir.to_path_buf()))?;
        if text.is_empty() || rel.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
            return Err(RemoteError::OutsideProject(dir.to_path_buf()));
        }
        Ok(text.to_string())
    }

    fn localize(&self, s: &str) -> String {
        match self.project_root.to_str() {
            Some(root) if self.project_root.is_absolute() => {
                let prefix = format!("{}/", root.trim_end_matches('/'));
                s.replace(&prefix, "")
            }
            _ => s.to_string(),
        }
    }

    fn run_script(&self, job: &Job, rel: &str) -> String {
        let env: BTreeMap<&String, String> = job.env.iter().map(|(k, v)| (k, self.localize(v))).collect();
        let mut words = vec!["env".to_string()];
        words.extend(env.iter().map(|(k, v)| shell::quote(&format!("{k}={v}"))));
        words.extend(job.command.iter().map(|a| shell::quote(&self.localize(a))));
        let dir = shell::quote(rel);
        format!(
            "cd {root} || exit 1; {cmd} > {dir}/{STDOUT_FILE} 2> {dir}/{STDERR_FILE} < /dev/null; echo \"{EXIT_TAG}$?\"",
            root = shell::quote(self.host.remote_root()),
            cmd = words.join(" "),
        )
    }

    fn try_execute(&self, job: &Job, running: &JobStatus) -> Result<JobStatus, RemoteError> {
        let t = self.host.transport();
        let rel = self.relative_dir(&job.output_dir)?;
        let remote_dir = format!("{}/{}", self.host.remote_root().trim_end_matches('/'), rel);
        let rd = shell::quote(&remote_dir);
        checked(
            t,
            &format!("rm -rf {rd} && mkdir -p {rd} && cat > {rd}/{STATUS_FILE}"),
            running.to_json().as_bytes(),
        )?;

        let script = self.run_script(job, &rel);
        let out = t.exec(&script, b"").map_err(|e| RemoteError::Spawn {
            command: t.describe(&script),
            source: e,
        })?;
        let code = out
            .stdout_text()
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix(EXIT_TAG).and_then(|c| c.trim().parse::<i32>().ok()))
            .ok_or(RemoteError::ConnectionLost {
                host: self.host.config().name.clone(),
            })?;

        let finished = running.finished(Some(code));
        checked(t, &format!("cat > {rd}/{STATUS_FILE}"), finished.to_json().as_bytes())?;
        match sync::pull_dir(t, &remote_dir, &job.output_dir) {
            Ok(()) => Ok(finished),
            Err(first) => {
                log::warn!("copy-back of {remote_dir} failed, retrying: {first}");
                sync::pull_dir(t, &remote_dir, &job.output_dir).map_err(|e| RemoteError::CopyBack(Box::new(e)))?;
                Ok(finished)
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn execute(&self, job: &Job, running: &JobStatus) -> JobStatus {
        match self.try_execute(job, running) {
            Ok(status) => status,
            Err(e) => {
                log::error!("{}: {e}", job.output_dir.display());
                let _ = std::fs::create_dir_all(&job.output_dir);
                if let Ok(mut f) = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(job.output_dir.join(STDERR_FILE))
                {
                    let _ = writeln!(f, "automan: {e}");
                }
                let failed = running.finished(None);
                if let Err(e) = failed.write(&job.output_dir) {
                    log::error!("{e}");
                }
                failed
            }
        }
    }

    fn load_average(&self) -> Option<f64> {
        let out = self.host.transport().exec("cat /proc/loadavg", b"").ok()?;
        if !out.success() {
            return None;
        }
        out.stdout_text().split_whitespace().next()?.parse().ok()
    }
}

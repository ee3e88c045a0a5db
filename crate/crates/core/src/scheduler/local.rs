use std::fs::{self, File};
use std::process::{Command, Stdio};

use super::status::{JobStatus, STDERR_FILE, STDOUT_FILE};
use super::{Backend, Job};

/// Runs jobs as child processes of this machine.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalBackend;

impl LocalBackend {
    fn run(job: &Job) -> std::io::Result<Option<i32>> {
        fs::create_dir_all(&job.output_dir)?;
        let stdout = File::create(job.output_dir.join(STDOUT_FILE))?;
        let stderr = File::create(job.output_dir.join(STDERR_FILE))?;
        let (program, args) = job
            .command
            .split_first()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))?;
        let status = Command::new(program)
            .args(args)
            .envs(&job.env)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .status()?;
        Ok(status.code())
    }
}

impl Backend for LocalBackend {
    fn execute(&self, job: &Job, running: &JobStatus) -> JobStatus {
        let code = match Self::run(job) {
            Ok(code) => code,
            Err(e) => {
                log::error!("cannot start `{}`: {e}", running.command);
                let _ = fs::write(job.output_dir.join(STDERR_FILE), format!("automan: cannot start job: {e}\n"));
                None
            }
        };
        let done = running.finished(code);
        if let Err(e) = done.write(&job.output_dir) {
            log::error!("{e}");
        }
        done
    }

    fn load_average(&self) -> Option<f64> {
        let text = fs::read_to_string("/proc/loadavg").ok()?;
        text.split_whitespace().next()?.parse().ok()
    }
}

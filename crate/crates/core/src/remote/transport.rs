use std::io::{self, Write};
use std::process::{Command, Stdio};
use std::thread;

use crate::shell;

/// Result of running a script on a host.
#[derive(Debug, Clone, Default)]
pub struct ExecOutput {
    pub code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl ExecOutput {
    pub fn success(&self) -> bool {
        self.code == Some(0)
    }

    pub fn stdout_text(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }
}

/// Runs `sh` scripts on some host.
pub trait Transport: Send + Sync {
    /// Runs `script` with `sh`, feeding it `stdin`. Relative paths in the
    /// script resolve against the host's login directory.
    fn exec(&self, script: &str, stdin: &[u8]) -> io::Result<ExecOutput>;

    /// The command line `exec` would run, for diagnostics.
    fn describe(&self, script: &str) -> String;

    /// Exit code meaning the connection failed rather than the script.
    fn connection_failure_code(&self) -> Option<i32> {
        None
    }
}

/// Password-less ssh; `BatchMode` makes any prompt an error.
#[derive(Debug, Clone)]
pub struct SshTransport {
    destination: String,
}

impl SshTransport {
    pub fn new(destination: impl Into<String>) -> Self {
        Self {
            destination: destination.into(),
        }
    }

    fn argv(&self, script: &str) -> Vec<String> {
        vec![
            "-o".into(),
            "BatchMode=yes".into(),
            "-o".into(),
            "ConnectTimeout=10".into(),
            self.destination.clone(),
            format!("sh -c {}", shell::quote(script)),
        ]
    }
}

impl Transport for SshTransport {
    fn exec(&self, script: &str, stdin: &[u8]) -> io::Result<ExecOutput> {
        let mut cmd = Command::new("ssh");
        cmd.args(self.argv(script));
        run_process(cmd, stdin)
    }

    fn describe(&self, script: &str) -> String {
        std::iter::once("ssh".to_string())
            .chain(self.argv(script))
            .map(|a| shell::quote(&a))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn connection_failure_code(&self) -> Option<i32> {
        Some(255)
    }
}

/// Runs scripts on this machine, standing in for a host that shares the
/// local filesystem.
#[derive(Debug, Clone, Default)]
pub struct LoopbackTransport;

impl Transport for LoopbackTransport {
    fn exec(&self, script: &str, stdin: &[u8]) -> io::Result<ExecOutput> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(script);
        run_process(cmd, stdin)
    }

    fn describe(&self, script: &str) -> String {
        format!("sh -c {}", shell::quote(script))
    }
}

/// Runs `cmd` to completion with `stdin` piped in and output captured.
pub(crate) fn run_process(mut cmd: Command, stdin: &[u8]) -> io::Result<ExecOutput> {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut input = child.stdin.take().expect("piped stdin");
    let output = thread::scope(|s| {
        let writer = s.spawn(move || {
            // the script may exit without reading everything
            let _ = input.write_all(stdin);
        });
        let out = child.wait_with_output();
        let _ = writer.join();
        out
    })?;
    Ok(ExecOutput {
        code: output.status.code(),
        stdout: output.stdout,
        stderr: output.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_round_trips_stdin() {
        let out = LoopbackTransport.exec("cat; echo err >&2; exit 3", b"hello").unwrap();
        assert_eq!(out.stdout, b"hello");
        assert_eq!(out.stderr_text(), "err\n");
        assert_eq!(out.code, Some(3));
    }

    #[test]
    fn ssh_command_line_quotes_script() {
        let t = SshTransport::new("me@node1");
        let argv = t.argv("cd 'a b' && ls");
        assert_eq!(argv[4], "me@node1");
        assert_eq!(argv[5], "sh -c 'cd '\\''a b'\\'' && ls'");
        assert!(t.describe("ls").starts_with("ssh -o BatchMode=yes -o ConnectTimeout=10 me@node1 "));
        assert_eq!(t.connection_failure_code(), Some(255));
    }
}

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_automan");

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Numbers from the summary line `N jobs run, M recipes run, ...`.
    pub fn summary(&self) -> (usize, usize) {
        let line = self
            .stdout
            .lines()
            .find(|l| l.contains(" jobs run, "))
            .unwrap_or_else(|| panic!("no summary in {:?}", self.stdout));
        let nums: Vec<usize> = line.split(|c: char| !c.is_ascii_digit()).filter_map(|s| s.parse().ok()).collect();
        (nums[0], nums[1])
    }
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

/// Runs the binary inside `dir` with a short poll interval.
pub fn automan(dir: &Path, args: &[&str]) -> Run {
    automan_env(dir, &[], args)
}

pub fn automan_env(dir: &Path, env: &[(&str, &str)], args: &[&str]) -> Run {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(["--poll-interval-ms", "10"]).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run automan").into()
}

pub fn write_config(dir: &Path, json: &str) {
    fs::write(dir.join("config.json"), json).unwrap();
}

pub fn local_config(cores: u32) -> String {
    format!(r#"{{"workers": [{{"name": "localhost", "kind": "local", "cores": {cores}, "enabled": true}}]}}"#)
}

/// Writes the bundled demo campaign and a 4-core local config.
pub fn demo_campaign(dir: &Path) {
    let out = Command::new(BIN).arg("demo-campaign").arg(dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    write_config(dir, &local_config(4));
}

/// Event-log lines `<time> <event> <task>` of the last run only.
pub fn last_run_events(dir: &Path, before: usize) -> Vec<(String, String)> {
    let text = fs::read_to_string(dir.join("automan.log")).unwrap_or_default();
    text.lines()
        .skip(before)
        .map(|l| {
            let mut parts = l.splitn(3, ' ');
            let _time = parts.next().unwrap();
            (parts.next().unwrap().to_string(), parts.next().unwrap_or("").to_string())
        })
        .collect()
}

pub fn log_len(dir: &Path) -> usize {
    fs::read_to_string(dir.join("automan.log")).map(|t| t.lines().count()).unwrap_or(0)
}

pub fn count(events: &[(String, String)], event: &str, prefix: &str) -> usize {
    events.iter().filter(|(e, t)| e == event && t.starts_with(prefix)).count()
}

/// Campaign of one problem whose cases run the given commands, with an
/// optional `sh -c` recipe.
pub fn shell_campaign(dir: &Path, problem: &str, cases: &[(&str, &str)], recipe: Option<&str>) {
    let mut text = String::from("simulation_dir = \"sims\"\noutput_dir = \"out\"\n\n[[problems]]\n");
    text.push_str(&format!("name = \"{problem}\"\n"));
    for (name, cmd) in cases {
        text.push_str(&format!(
            "\n[[problems.cases]]\nname = \"{name}\"\nbase_command = {}\n",
            toml_str(cmd)
        ));
    }
    if let Some(argv) = recipe {
        text.push_str(&format!(
            "\n[[problems.recipes]]\nkind = \"command\"\nargv = [\"sh\", \"-c\", {}]\n",
            toml_str(argv)
        ));
    }
    fs::write(dir.join("campaign.toml"), text).unwrap();
}

fn toml_str(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Relative paths and contents of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Max of each labeled column of a comparison CSV, skipping empty cells.
pub fn column_maxima(csv: &str) -> Vec<(String, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut max = vec![0.0f64; header.len()];
    for l in lines {
        for (i, cell) in l.split(',').enumerate().skip(1) {
            if !cell.is_empty() {
                max[i] = max[i].max(cell.parse::<f64>().unwrap());
            }
        }
    }
    header.iter().zip(max).skip(1).map(|(h, m)| (h.to_string(), m)).collect()
}

/// Closed-form explicit Euler error for du/dt = -u, u(0) = 1:
/// max over steps of |(1 - dt)^n - exp(-n dt)| up to t = 1.
pub fn euler_max_error(dt: f64) -> f64 {
    let steps = (1.0 / dt).round() as i32;
    (0..=steps)
        .map(|n| ((1.0 - dt).powi(n) - (-(n as f64) * dt).exp()).abs())
        .fold(0.0, f64::max)
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Adds a 4-core worker `loop` for localhost rooted at `remote_root`, runs a
/// 4-case campaign and compares remote and local case directories; then
/// disables the worker and checks that a fresh run stays local.
pub fn remote_round_trip(dir: &Path, remote_root: &Path, env: &[(&str, &str)]) -> Result<String, String> {
    let cases: Vec<(String, String)> =
        (0..4).map(|i| (format!("c{i}"), format!("sh -c 'sleep 0.3; echo case {i}; echo err {i} >&2'"))).collect();
    let refs: Vec<(&str, &str)> = cases.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    shell_campaign(dir, "remote", &refs, None);
    write_config(dir, &local_config(1));
    let root = remote_root.to_string_lossy();
    let add = automan_env(dir, env, &["-a", "localhost", "--name", "loop", "--remote-root", &root, "--cores", "4"]);
    check(add.code == 0, format!("add failed: {}", add.stderr))?;

    let before = log_len(dir);
    let run = automan_env(dir, env, &[]);
    check(run.code == 0, format!("run exit {}: {}", run.code, run.stderr))?;
    let events = last_run_events(dir, before);
    let remote: Vec<String> = events
        .iter()
        .filter(|(e, _)| e == "started:loop")
        .map(|(_, t)| t.trim_start_matches("cmd:").to_string())
        .collect();
    check(!remote.is_empty(), "no job went to the remote worker")?;
    for rel in &remote {
        let local = tree(&dir.join(rel));
        let far = tree(&remote_root.join(rel));
        check(!local.is_empty() && local == far, format!("{rel}: local and remote copies differ"))?;
    }

    let cfg_path = dir.join("config.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    for w in cfg["workers"].as_array_mut().unwrap() {
        if w["name"] == "loop" {
            w["enabled"] = false.into();
        }
    }
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    fs::remove_dir_all(dir.join("sims")).unwrap();
    fs::remove_dir_all(dir.join("out")).unwrap();
    let before = log_len(dir);
    let run = automan_env(dir, env, &[]);
    check(run.code == 0, format!("local rerun exit {}", run.code))?;
    let events = last_run_events(dir, before);
    check(count(&events, "started:loop", "") == 0, "disabled worker still dispatched to")?;
    check(count(&events, "started:localhost", "") == 4, "not all jobs ran locally")?;
    Ok(format!("{} remote case dirs byte-identical; disabled worker unused", remote.len()))
}

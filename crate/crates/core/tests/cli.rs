mod common;

use std::fs;
use std::process::Command;

use common::*;

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(automan(dir, &["--no-such-flag"]).code, 2);
    assert_eq!(automan(dir, &["-m", "*", "-a", "host"]).code, 2);
    assert_eq!(automan(dir, &["--cores", "2"]).code, 2, "--cores needs -a");
    // no campaign file
    let run = automan(dir, &[]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("campaign.toml"), "{}", run.stderr);
    assert_eq!(automan(dir, &["--help"]).code, 0);
}

#[test]
fn invalid_campaign_and_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("campaign.toml"), "simulation_dir = \"s\"\noutput_dir = \"o\"\n[[problems]]\nnam = \"x\"\n").unwrap();
    let run = automan(dir, &[]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("campaign.toml"), "{}", run.stderr);

    shell_campaign(dir, "p", &[("a", "sh -c true")], None);
    write_config(dir, r#"{"workers": []}"#);
    assert_eq!(automan(dir, &[]).code, 2);
}

#[test]
fn event_log_lines_are_timestamped() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    shell_campaign(dir, "p", &[("a", "sh -c true"), ("b", "sh -c true")], Some("true"));
    write_config(dir, &local_config(2));
    assert_eq!(automan(dir, &[]).code, 0);
    assert_eq!(automan(dir, &[]).code, 0);
    let log = fs::read_to_string(dir.join("automan.log")).unwrap();
    let re = regex::Regex::new(
        r"^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z (skipped|submitted|done|failed|blocked|started:localhost) (cmd:|solve:|run_all)",
    )
    .unwrap();
    for line in log.lines() {
        assert!(re.is_match(line), "{line}");
    }
    let last: Vec<&str> = log.lines().skip_while(|l| !l.contains("skipped")).collect();
    assert_eq!(last.len(), 1, "{log}");
    assert!(last[0].ends_with(" skipped run_all"));
}

#[test]
fn match_never_runs_recipes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let marker = dir.join("recipe");
    shell_campaign(dir, "p", &[("a", "sh -c true")], Some(&format!("touch '{}'", marker.display())));
    write_config(dir, &local_config(1));
    assert_eq!(automan(dir, &["-m", "*"]).summary(), (1, 0));
    // all cases complete, -m still runs no recipes
    assert_eq!(automan(dir, &["--match", "a"]).summary(), (0, 0));
    assert!(!marker.exists());
    assert_eq!(automan(dir, &[]).summary(), (0, 1));
    assert!(marker.exists());
}

#[test]
fn deleting_a_case_reruns_only_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    shell_campaign(dir, "p", &[("a", "sh -c true"), ("b", "sh -c true")], Some("true"));
    write_config(dir, &local_config(2));
    assert_eq!(automan(dir, &[]).summary(), (2, 1));
    fs::remove_dir_all(dir.join("sims/p/b")).unwrap();
    // recipes already succeeded; the problem is complete and not re-expanded
    assert_eq!(automan(dir, &[]).summary(), (0, 0));
    fs::remove_dir_all(dir.join("out/p")).unwrap();
    assert_eq!(automan(dir, &[]).summary(), (1, 1));
}

#[test]
fn exit_code_reflects_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    shell_campaign(dir, "p", &[("ok", "sh -c true")], Some("exit 4"));
    write_config(dir, &local_config(1));
    let run = automan(dir, &[]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("solve:p"), "{}", run.stderr);
    // the case is done; only the recipes are retried
    assert_eq!(automan(dir, &[]).summary(), (0, 1));
}

#[test]
fn recipes_see_campaign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    shell_campaign(
        dir,
        "p",
        &[("a", "sh -c 'echo 1 > \"$0\"/value'")],
        Some("cat \"$AUTOMAN_SIM_DIR\"/a/value > \"$AUTOMAN_OUTPUT_DIR\"/copied"),
    );
    fs::write(
        dir.join("campaign.toml"),
        fs::read_to_string(dir.join("campaign.toml")).unwrap().replace(
            "base_command = \"sh -c 'echo 1 > \\\"$0\\\"/value'\"",
            "base_command = \"sh -c 'echo 1 > \\\"$0\\\"/value' $output_dir\"",
        ),
    )
    .unwrap();
    write_config(dir, &local_config(1));
    let run = automan(dir, &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(fs::read_to_string(dir.join("out/p/copied")).unwrap(), "1\n");
}

#[test]
fn demo_simulate_prints_what_it_writes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["demo-simulate", "--dt", "0.25", "--t-final", "1", "--scheme", "heun", "--output-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let written = fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), written);
    assert_eq!(written.lines().count(), 6);
    assert!(written.starts_with("t,u,l1\n"));

    let bad = Command::new(BIN)
        .args(["demo-simulate", "--dt", "0", "--output-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn campaign_path_may_point_elsewhere() {
    let tmp = tempfile::tempdir().unwrap();
    let camp = tmp.path().join("camp");
    fs::create_dir(&camp).unwrap();
    demo_campaign(&camp);
    let elsewhere = tmp.path().join("cwd");
    fs::create_dir(&elsewhere).unwrap();
    let path = camp.join("campaign.toml");
    let run = automan(&elsewhere, &["--campaign", path.to_str().unwrap(), "decay"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(camp.join("manuscript/figures/decay/heun_l1.csv").exists());
    assert!(camp.join("automan.log").exists());
    assert!(fs::read_dir(&elsewhere).unwrap().next().is_none());
}

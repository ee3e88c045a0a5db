//! The `automan` command line.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::automator::{Automator, AutomatorError, AutomatorOptions, TransportFactory};
use crate::campaign::{CampaignFile, CAMPAIGN_FILE};
use crate::config::{ClusterConfig, CONFIG_FILE};
use crate::demo::{self, Decay, Scheme};
use crate::remote::{self, AddHostOptions, LoopbackTransport, Project, RemoteHost};
use crate::scheduler::SchedulerOptions;
use crate::task::EventKind;

/// Event log written next to the campaign file unless `--event-log` is given.
pub const EVENT_LOG: &str = "automan.log";

/// Set to `1` to reach SSH workers through a local shell instead of ssh,
/// for hosts that share this machine's filesystem.
pub const LOOPBACK_ENV: &str = "AUTOMAN_LOOPBACK_TRANSPORT";

#[derive(Debug, Parser)]
#[command(
    name = "automan",
    version,
    about = "Run a simulation campaign and its post-processing, skipping whatever is already done.",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Option<Hidden>,

    /// Problems to run (default: all). Letter case, `_` and `-` are ignored.
    #[arg(value_name = "PROBLEM")]
    pub problems: Vec<String>,

    /// Re-run post-processing even if the problem's output exists.
    #[arg(short = 'f', long = "force-post")]
    pub force_post: bool,

    /// Run only cases whose names match this shell pattern; no post-processing.
    #[arg(short = 'm', long = "match", value_name = "PATTERN")]
    pub match_pattern: Option<String>,

    /// Set up HOST as an SSH worker and exit.
    #[arg(short = 'a', long = "add-worker", value_name = "HOST", conflicts_with = "match_pattern")]
    pub add_worker: Option<String>,

    /// Push sources to all SSH workers and run their update scripts first.
    #[arg(short = 'u', long = "update")]
    pub update: bool,

    /// Worker configuration (default: config.json beside the campaign).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, value_name = "PATH", default_value = CAMPAIGN_FILE)]
    pub campaign: PathBuf,

    /// Append task events here (default: automan.log beside the campaign).
    #[arg(long, value_name = "PATH")]
    pub event_log: Option<PathBuf>,

    /// How often running tasks are polled.
    #[arg(long, value_name = "MS", default_value_t = 200)]
    pub poll_interval_ms: u64,

    /// Only start jobs on workers whose load average leaves room for them.
    #[arg(long)]
    pub check_load: bool,

    /// Worker name for --add-worker (default: the host name).
    #[arg(long, requires = "add_worker")]
    pub name: Option<String>,

    /// Remote user for --add-worker.
    #[arg(long, requires = "add_worker")]
    pub user: Option<String>,

    /// Remote directory for --add-worker, relative to the remote home.
    #[arg(long, requires = "add_worker")]
    pub remote_root: Option<String>,

    /// Core count for --add-worker instead of the host's processor count.
    #[arg(long, requires = "add_worker", value_parser = clap::value_parser!(u32).range(1..))]
    pub cores: Option<u32>,

    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Hidden {
    /// Integrate du/dt = -k u and write results.csv.
    #[command(hide = true)]
    DemoSimulate {
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        decay_rate: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        t_final: f64,
        #[arg(long, default_value = "euler")]
        scheme: Scheme,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Write the bundled demo campaign into DIR.
    #[command(hide = true)]
    DemoCampaign { dir: PathBuf },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    run(cli)
}

fn campaign_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn project(campaign: Option<&CampaignFile>, root: &Path) -> Project {
    let mut excludes = campaign.map(CampaignFile::generated_dirs).unwrap_or_default();
    excludes.push(PathBuf::from(EVENT_LOG));
    Project::new(root, excludes)
}

fn transport_override() -> Option<TransportFactory> {
    let on = std::env::var(LOOPBACK_ENV).is_ok_and(|v| v == "1");
    on.then(|| Arc::new(|_: &crate::config::WorkerConfig| Arc::new(LoopbackTransport) as Arc<dyn remote::Transport>) as TransportFactory)
}

fn run(cli: Cli) -> i32 {
    match cli.command {
        Some(Hidden::DemoSimulate {
            decay_rate,
            dt,
            t_final,
            scheme,
            output_dir,
        }) => {
            let d = Decay {
                decay_rate,
                dt,
                t_final,
                scheme,
            };
            if let Err(e) = d.validate() {
                eprintln!("automan demo-simulate: {e}");
                return 2;
            }
            return match d.run(&output_dir) {
                Ok(csv) => {
                    print!("{csv}");
                    0
                }
                Err(e) => {
                    eprintln!("automan demo-simulate: {}: {e}", output_dir.display());
                    1
                }
            };
        }
        Some(Hidden::DemoCampaign { dir }) => {
            let exe = std::env::current_exe().unwrap_or_else(|_| PathBuf::from("automan"));
            return match demo::write_campaign(&dir, &exe) {
                Ok(path) => {
                    println!("{}", path.display());
                    0
                }
                Err(e) => {
                    eprintln!("automan: {}: {e}", dir.display());
                    1
                }
            };
        }
        None => {}
    }

    let root = campaign_dir(&cli.campaign);
    let cfg_path = cli.config.clone().unwrap_or_else(|| root.join(CONFIG_FILE));

    if let Some(host) = &cli.add_worker {
        let campaign = CampaignFile::load(&cli.campaign).ok();
        let opts = AddHostOptions {
            name: cli.name.clone(),
            user: cli.user.clone(),
            remote_root: cli.remote_root.clone(),
            cores: cli.cores,
            check_commands: campaign.as_ref().map(CampaignFile::programs).unwrap_or_default(),
        };
        let transport = transport_override().map(|make| {
            make(&crate::config::WorkerConfig::ssh(host.clone(), host.clone(), None, String::new(), 1))
        });
        return match remote::add_host(host, &opts, &project(campaign.as_ref(), &root), &cfg_path, transport) {
            Ok(w) => {
                println!("added worker {} ({} cores) to {}", w.name, w.cores, cfg_path.display());
                0
            }
            Err(e) => {
                eprintln!("automan: cannot add {host}: {e}");
                1
            }
        };
    }

    let campaign = match CampaignFile::load(&cli.campaign) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("automan: {e}");
            return 2;
        }
    };
    let config = match ClusterConfig::load(&cfg_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("automan: {e}");
            return 2;
        }
    };
    let mut failed = false;

    if cli.update {
        let hosts: Vec<RemoteHost> = match transport_override() {
            Some(make) => remote::ssh_hosts(&config)
                .into_iter()
                .map(|h| RemoteHost::new(h.config().clone(), make(h.config())))
                .collect(),
            None => remote::ssh_hosts(&config),
        };
        for (name, result) in remote::update_sources(&hosts, &project(Some(&campaign), &campaign.root)) {
            match result {
                Ok(()) => println!("updated {name}"),
                Err(e) => {
                    eprintln!("automan: update of {name} failed: {e}");
                    failed = true;
                }
            }
        }
    }

    let opts = AutomatorOptions {
        problems: cli.problems.clone(),
        force_post: cli.force_post,
        match_pattern: cli.match_pattern.clone(),
        poll_interval: Duration::from_millis(cli.poll_interval_ms.max(1)),
        scheduler: SchedulerOptions {
            check_load: cli.check_load,
            ..SchedulerOptions::default()
        },
        transport: transport_override(),
    };
    let mut automator = Automator::from_campaign(&campaign, config, opts);
    automator.set_project(project(Some(&campaign), &campaign.root));
    let outcome = match automator.run() {
        Ok(o) => o,
        Err(e @ AutomatorError::UnknownProblem { .. }) => {
            eprintln!("automan: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("automan: {e}");
            return 1;
        }
    };

    let log_path = cli.event_log.clone().unwrap_or_else(|| root.join(EVENT_LOG));
    let written = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .and_then(|mut f| f.write_all(outcome.log_lines().as_bytes()));
    if let Err(e) = written {
        eprintln!("automan: {}: {e}", log_path.display());
    }

    for e in outcome.report.events.iter().filter(|e| e.kind == EventKind::Failed) {
        match e.detail.as_deref() {
            Some(d) if d.contains(&e.task) => eprintln!("automan: {d}"),
            Some(d) => eprintln!("automan: {}: {d}", e.task),
            None => eprintln!("automan: {} failed", e.task),
        }
    }
    let r = &outcome.report;
    println!(
        "{} jobs run, {} recipes run, {} tasks skipped, {} failed, {} blocked",
        r.jobs_submitted(),
        r.recipes_run(),
        r.skipped(),
        r.failed(),
        r.blocked()
    );
    if failed || !outcome.succeeded() {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("automan").chain(args.iter().copied()))
    }

    #[test]
    fn flag_surface() {
        let c = parse(&["-f", "TaylorGreen", "EllipticalDrop"]).unwrap();
        assert!(c.force_post);
        assert_eq!(c.problems, ["TaylorGreen", "EllipticalDrop"]);
        let c = parse(&["--match", "*tensile*", "-u", "--config", "c.json", "--campaign", "x/c.toml"]).unwrap();
        assert_eq!(c.match_pattern.as_deref(), Some("*tensile*"));
        assert!(c.update);
        assert_eq!(c.config.unwrap(), Path::new("c.json"));
        let c = parse(&["-a", "node1", "--cores", "4"]).unwrap();
        assert_eq!(c.add_worker.as_deref(), Some("node1"));
        assert_eq!(c.cores, Some(4));
        assert_eq!(parse(&[]).unwrap().campaign, Path::new("campaign.toml"));
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&["-a", "h", "-m", "*"]).is_err());
        assert!(parse(&["--cores", "2"]).is_err());
        assert!(parse(&["-a", "h", "--cores", "0"]).is_err());
        assert!(parse(&["--bogus"]).is_err());
        assert_eq!(main_with(["automan", "-a", "h", "-m", "*"]), 2);
    }

    #[test]
    fn hidden_subcommands_parse() {
        let c = parse(&["demo-simulate", "--dt", "0.1", "--t-final", "1", "--output-dir", "o", "--scheme", "heun"]).unwrap();
        assert!(matches!(c.command, Some(Hidden::DemoSimulate { scheme: Scheme::Heun, .. })));
        assert!(parse(&["demo-simulate", "--dt", "0.1", "--t-final", "1", "--output-dir", "o", "--scheme", "rk4"]).is_err());
    }
}

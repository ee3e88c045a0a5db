//! Runs a campaign: selects problems, builds the task graph and drives it
//! through a scheduler over the configured workers.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::SecondsFormat;
use thiserror::Error;

use crate::campaign::CampaignFile;
use crate::case::match_pattern;
use crate::config::{ClusterConfig, WorkerConfig, WorkerKind};
use crate::problem::ProblemSpec;
use crate::remote::{Project, RemoteBackend, RemoteHost, Transport};
use crate::scheduler::{
    LocalBackend, SchedEvent, SchedEventKind, Scheduler, SchedulerError, SchedulerOptions, Worker,
};
use crate::task::{run_graph, RunAllTask, RunReport, SolveProblemTask, Task, TaskError, WrapperTask};

/// Builds the transport for an SSH worker; `ssh` unless overridden.
pub type TransportFactory = Arc<dyn Fn(&WorkerConfig) -> Arc<dyn Transport> + Send + Sync>;

#[derive(Debug, Error)]
pub enum AutomatorError {
    #[error("unknown problem `{name}`; available: {}", .available.join(", "))]
    UnknownProblem { name: String, available: Vec<String> },
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Clone)]
pub struct AutomatorOptions {
    /// Problems to run; all when empty. Matched ignoring case, `_` and `-`.
    pub problems: Vec<String>,
    /// Re-run the recipes of the selected problems.
    pub force_post: bool,
    /// Run only the cases whose names match this pattern, without recipes.
    pub match_pattern: Option<String>,
    pub poll_interval: Duration,
    pub scheduler: SchedulerOptions,
    pub transport: Option<TransportFactory>,
}

impl Default for AutomatorOptions {
    fn default() -> Self {
        Self {
            problems: Vec::new(),
            force_post: false,
            match_pattern: None,
            poll_interval: Duration::from_millis(200),
            scheduler: SchedulerOptions::default(),
            transport: None,
        }
    }
}

/// Key under which problem names are compared on the command line, so that
/// `TaylorGreen`, `taylor_green` and `TAYLOR-GREEN` select the same problem.
pub fn selection_key(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Problems named in `names` (all of them when empty), in campaign order.
pub fn select_problems(problems: &[Arc<ProblemSpec>], names: &[String]) -> Result<Vec<Arc<ProblemSpec>>, AutomatorError> {
    if names.is_empty() {
        return Ok(problems.to_vec());
    }
    let mut wanted = BTreeSet::new();
    for name in names {
        let key = selection_key(name);
        if !problems.iter().any(|p| selection_key(p.name()) == key) {
            return Err(AutomatorError::UnknownProblem {
                name: name.clone(),
                available: problems.iter().map(|p| p.name().to_string()).collect(),
            });
        }
        wanted.insert(key);
    }
    Ok(problems
        .iter()
        .filter(|p| wanted.contains(&selection_key(p.name())))
        .cloned()
        .collect())
}

/// What one run did: task events plus the scheduler's dispatch log.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub dispatch: Vec<SchedEvent>,
}

impl Outcome {
    pub fn succeeded(&self) -> bool {
        self.report.succeeded()
    }

    /// Jobs started on the named worker.
    pub fn dispatches_to(&self, worker: &str) -> usize {
        self.dispatch
            .iter()
            .filter(|e| e.kind == SchedEventKind::Start && e.worker == worker)
            .count()
    }

    /// Event log: `<timestamp> <event> <task-id>` per line, in time order.
    /// Job starts appear as `started:<worker>`.
    pub fn log_lines(&self) -> String {
        let mut lines: Vec<(chrono::DateTime<chrono::Utc>, String)> = self
            .report
            .events
            .iter()
            .map(|e| (e.time, e.to_string()))
            .collect();
        for e in self.dispatch.iter().filter(|e| e.kind == SchedEventKind::Start) {
            lines.push((
                e.time,
                format!(
                    "{} started:{} cmd:{}",
                    e.time.to_rfc3339_opts(SecondsFormat::Millis, true),
                    e.worker,
                    e.output_dir.display()
                ),
            ));
        }
        lines.sort_by_key(|(t, _)| *t);
        lines.into_iter().map(|(_, l)| l + "\n").collect()
    }
}

pub struct Automator {
    problems: Vec<Arc<ProblemSpec>>,
    project: Project,
    config: ClusterConfig,
    opts: AutomatorOptions,
}

impl Automator {
    pub fn new(problems: Vec<Arc<ProblemSpec>>, project: Project, config: ClusterConfig, opts: AutomatorOptions) -> Self {
        Self {
            problems,
            project,
            config,
            opts,
        }
    }

    pub fn from_campaign(campaign: &CampaignFile, config: ClusterConfig, opts: AutomatorOptions) -> Self {
        let project = Project::new(campaign.root.clone(), campaign.generated_dirs());
        Self::new(campaign.problems.clone(), project, config, opts)
    }

    /// Replaces the project used for remote workers.
    pub fn set_project(&mut self, project: Project) {
        self.project = project;
    }

    pub fn problems(&self) -> &[Arc<ProblemSpec>] {
        &self.problems
    }

    /// The task graph root for the configured selection.
    pub fn root_task(&self) -> Result<Box<dyn Task>, AutomatorError> {
        let selected = select_problems(&self.problems, &self.opts.problems)?;
        if let Some(pattern) = &self.opts.match_pattern {
            let mut tasks: Vec<Box<dyn Task>> = Vec::new();
            for p in &selected {
                let all = SolveProblemTask::case_tasks(p);
                let matched: Vec<&str> = match_pattern(p.cases(), pattern).iter().map(|c| c.name()).collect();
                for (case, task) in p.cases().iter().zip(all) {
                    if matched.contains(&case.name()) {
                        tasks.push(Box::new(task));
                    }
                }
            }
            return Ok(Box::new(WrapperTask::new(format!("match:{pattern}"), tasks)));
        }
        let solves = selected
            .into_iter()
            .map(|p| {
                let t = SolveProblemTask::new(p);
                if self.opts.force_post {
                    t.forced()
                } else {
                    t
                }
            })
            .collect();
        Ok(Box::new(RunAllTask::new(solves)))
    }

    fn workers(&self) -> Vec<Worker> {
        self.config
            .workers
            .iter()
            .map(|w| match w.kind {
                WorkerKind::Local => Worker::new(w.clone(), Arc::new(LocalBackend)),
                WorkerKind::Ssh => {
                    let host = match &self.opts.transport {
                        Some(make) => RemoteHost::new(w.clone(), make(w)),
                        None => RemoteHost::ssh(w.clone()),
                    };
                    Worker::new(w.clone(), Arc::new(RemoteBackend::new(host, self.project.root.clone())))
                }
            })
            .collect()
    }

    pub fn run(&self) -> Result<Outcome, AutomatorError> {
        let root = self.root_task()?;
        let sched = Scheduler::new(self.workers(), self.opts.scheduler.clone())?;
        let result = run_graph(root, &sched, self.opts.poll_interval);
        let dispatch = sched.shutdown();
        Ok(Outcome {
            report: result?,
            dispatch,
        })
    }
}

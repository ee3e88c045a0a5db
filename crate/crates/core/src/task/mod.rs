//! Tasks with `complete` / `run` / `requires` semantics.
//!
//! `complete` is a side-effect-free query of persistent state, `requires`
//! may build its dependencies on demand, and `run` hands work to the
//! scheduler without waiting for it. [`run_graph`] drives a task graph to
//! completion by polling.

mod runner;

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::problem::{ProblemError, ProblemSpec};
use crate::scheduler::{Job, JobHandle, JobState, JobStatus, Phase, Scheduler, SchedulerError, StatusError};

pub use runner::{run_graph, EventKind, RunEvent, RunReport};

/// Written into a problem's output directory once all of its recipes
/// succeed.
pub const RECIPES_DONE_MARKER: &str = ".automan_recipes_done";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task `{id}` failed: {reason}")]
    Failed { id: String, reason: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error(transparent)]
    Submit(#[from] SchedulerError),
    #[error(transparent)]
    Status(#[from] StatusError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Command,
    Wrapper,
    SolveProblem,
    RunAll,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Command => "command",
            TaskKind::Wrapper => "wrapper",
            TaskKind::SolveProblem => "solve",
            TaskKind::RunAll => "run_all",
        }
    }
}

pub trait Task: Send {
    /// Stable identity; tasks with equal ids are the same graph node.
    fn id(&self) -> String;

    fn kind(&self) -> TaskKind;

    /// Whether the task has finished successfully. An error means the
    /// task's last attempt failed.
    fn complete(&self) -> Result<bool, TaskError>;

    /// Starts the task. Must not block on long-running work.
    fn run(&mut self, sched: &Scheduler) -> Result<(), TaskError>;

    /// Completion check for a task started by [`Task::run`].
    fn poll(&self, _sched: &Scheduler) -> Result<bool, TaskError> {
        self.complete()
    }

    /// Tasks that must be complete before this one may run.
    fn requires(&self) -> Vec<Box<dyn Task>>;

    fn clone_box(&self) -> Box<dyn Task>;
}

impl Clone for Box<dyn Task> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Runs a [`Job`]; complete once the job's status record says `done`.
#[derive(Clone)]
pub struct CommandTask {
    job: Job,
    depends: Vec<Box<dyn Task>>,
    handle: Option<JobHandle>,
}

impl CommandTask {
    pub fn new(job: Job) -> Self {
        Self {
            job,
            depends: Vec::new(),
            handle: None,
        }
    }

    pub fn with_depends(mut self, depends: Vec<Box<dyn Task>>) -> Self {
        self.depends = depends;
        self
    }

    pub fn output_dir(&self) -> &PathBuf {
        &self.job.output_dir
    }

    pub fn job(&self) -> &Job {
        &self.job
    }
}

impl Task for CommandTask {
    fn id(&self) -> String {
        format!("cmd:{}", self.job.output_dir.display())
    }

    fn kind(&self) -> TaskKind {
        TaskKind::Command
    }

    fn complete(&self) -> Result<bool, TaskError> {
        match JobStatus::read(&self.job.output_dir)? {
            None => Ok(false),
            Some(s) => match s.phase {
                Phase::Running => Ok(false),
                Phase::Done => Ok(true),
                Phase::Failed => Err(TaskError::Failed {
                    id: self.id(),
                    reason: match s.exit_code {
                        Some(c) => format!("`{}` exited with code {c}", s.command),
                        None => format!("`{}` did not exit normally", s.command),
                    },
                }),
            },
        }
    }

    fn run(&mut self, sched: &Scheduler) -> Result<(), TaskError> {
        self.handle = Some(sched.submit(self.job.clone())?);
        Ok(())
    }

    fn poll(&self, sched: &Scheduler) -> Result<bool, TaskError> {
        if let Some(h) = &self.handle {
            if sched.poll(h)? == JobState::Pending {
                return Ok(false);
            }
        }
        self.complete()
    }

    fn requires(&self) -> Vec<Box<dyn Task>> {
        self.depends.clone()
    }

    fn clone_box(&self) -> Box<dyn Task> {
        Box::new(self.clone())
    }
}

/// Does nothing itself; complete when all of its required tasks are.
#[derive(Clone)]
pub struct WrapperTask {
    id: String,
    requires: Vec<Box<dyn Task>>,
}

impl WrapperTask {
    pub fn new(id: impl Into<String>, requires: Vec<Box<dyn Task>>) -> Self {
        Self { id: id.into(), requires }
    }
}

fn all_complete(tasks: &[Box<dyn Task>]) -> Result<bool, TaskError> {
    for t in tasks {
        if !t.complete()? {
            return Ok(false);
        }
    }
    Ok(true)
}

impl Task for WrapperTask {
    fn id(&self) -> String {
        format!("wrap:{}", self.id)
    }

    fn kind(&self) -> TaskKind {
        TaskKind::Wrapper
    }

    fn complete(&self) -> Result<bool, TaskError> {
        all_complete(&self.requires)
    }

    fn run(&mut self, _sched: &Scheduler) -> Result<(), TaskError> {
        Ok(())
    }

    fn requires(&self) -> Vec<Box<dyn Task>> {
        self.requires.clone()
    }

    fn clone_box(&self) -> Box<dyn Task> {
        Box::new(self.clone())
    }
}

/// One command task per case, then the problem's recipes once they are all
/// complete. Complete when the output directory holds the success marker.
#[derive(Clone)]
pub struct SolveProblemTask {
    problem: Arc<ProblemSpec>,
    /// Re-run recipes even when the marker exists; shared between clones
    /// so that every copy sees the forced run once it has happened.
    force: bool,
    forced_run_done: Arc<AtomicBool>,
}

impl SolveProblemTask {
    pub fn new(problem: Arc<ProblemSpec>) -> Self {
        Self {
            problem,
            force: false,
            forced_run_done: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Recipes run in this invocation regardless of earlier success.
    pub fn forced(mut self) -> Self {
        self.force = true;
        self
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn case_tasks(problem: &ProblemSpec) -> Vec<CommandTask> {
        problem
            .cases()
            .iter()
            .zip(problem.get_commands())
            .map(|(case, (_, command, info))| CommandTask::new(Job::shell(command, case.root(), info)))
            .collect()
    }

    fn marker(&self) -> PathBuf {
        self.problem.output_path([RECIPES_DONE_MARKER])
    }
}

impl Task for SolveProblemTask {
    fn id(&self) -> String {
        format!("solve:{}", self.problem.name())
    }

    fn kind(&self) -> TaskKind {
        TaskKind::SolveProblem
    }

    fn complete(&self) -> Result<bool, TaskError> {
        if self.force && !self.forced_run_done.load(Ordering::SeqCst) {
            return Ok(false);
        }
        Ok(self.problem.output_dir().is_dir() && self.marker().is_file())
    }

    fn run(&mut self, _sched: &Scheduler) -> Result<(), TaskError> {
        let marker = self.marker();
        let _ = fs::remove_file(&marker);
        let result = self.problem.run_recipes();
        self.forced_run_done.store(true, Ordering::SeqCst);
        result?;
        fs::write(&marker, "").map_err(|source| ProblemError::Io { path: marker, source })?;
        Ok(())
    }

    fn requires(&self) -> Vec<Box<dyn Task>> {
        Self::case_tasks(&self.problem)
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn Task>)
            .collect()
    }

    fn clone_box(&self) -> Box<dyn Task> {
        Box::new(self.clone())
    }
}

/// Solves every given problem.
#[derive(Clone)]
pub struct RunAllTask {
    problems: Vec<SolveProblemTask>,
}

impl RunAllTask {
    pub fn new(problems: Vec<SolveProblemTask>) -> Self {
        Self { problems }
    }
}

impl Task for RunAllTask {
    fn id(&self) -> String {
        "run_all".to_string()
    }

    fn kind(&self) -> TaskKind {
        TaskKind::RunAll
    }

    fn complete(&self) -> Result<bool, TaskError> {
        all_complete(&self.requires())
    }

    fn run(&mut self, _sched: &Scheduler) -> Result<(), TaskError> {
        Ok(())
    }

    fn requires(&self) -> Vec<Box<dyn Task>> {
        self.problems.iter().map(|p| Box::new(p.clone()) as Box<dyn Task>).collect()
    }

    fn clone_box(&self) -> Box<dyn Task> {
        Box::new(self.clone())
    }
}

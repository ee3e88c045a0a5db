use std::collections::HashMap;
use std::fmt;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};

use super::{Task, TaskError, TaskKind};
use crate::scheduler::Scheduler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Found complete before anything was run.
    Skipped,
    Submitted,
    Done,
    Failed,
    /// Not run because a dependency failed.
    Blocked,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Skipped => "skipped",
            EventKind::Submitted => "submitted",
            EventKind::Done => "done",
            EventKind::Failed => "failed",
            EventKind::Blocked => "blocked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunEvent {
    pub time: DateTime<Utc>,
    pub kind: EventKind,
    pub task: String,
    pub task_kind: TaskKind,
    pub detail: Option<String>,
}

impl fmt::Display for RunEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.time.to_rfc3339_opts(SecondsFormat::Millis, true),
            self.kind.as_str(),
            self.task
        )
    }
}

/// Outcome of one [`run_graph`] call.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub events: Vec<RunEvent>,
}

impl RunReport {
    fn count(&self, kind: EventKind, task_kind: Option<TaskKind>) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == kind && task_kind.is_none_or(|k| e.task_kind == k))
            .count()
    }

    /// Tasks that were run.
    pub fn executed(&self) -> usize {
        self.count(EventKind::Submitted, None)
    }

    pub fn skipped(&self) -> usize {
        self.count(EventKind::Skipped, None)
    }

    pub fn failed(&self) -> usize {
        self.count(EventKind::Failed, None)
    }

    pub fn blocked(&self) -> usize {
        self.count(EventKind::Blocked, None)
    }

    /// Command tasks handed to the scheduler.
    pub fn jobs_submitted(&self) -> usize {
        self.count(EventKind::Submitted, Some(TaskKind::Command))
    }

    /// Problems whose recipes were executed.
    pub fn recipes_run(&self) -> usize {
        self.count(EventKind::Submitted, Some(TaskKind::SolveProblem))
    }

    pub fn succeeded(&self) -> bool {
        self.failed() == 0 && self.blocked() == 0
    }

    /// `<timestamp> <event> <task-id>` lines.
    pub fn to_lines(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    /// Task ids of all events of `kind`, in log order.
    pub fn ids(&self, kind: EventKind) -> Vec<&str> {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.task.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Pending,
    Submitted,
    Done,
    Failed,
    Blocked,
}

struct Node {
    task: Box<dyn Task>,
    deps: Vec<usize>,
    state: State,
}

struct Graph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    on_stack: Vec<String>,
    report: RunReport,
}

impl Graph {
    fn log(&mut self, node: usize, kind: EventKind, detail: Option<String>) {
        let task = &self.nodes[node].task;
        let event = RunEvent {
            time: Utc::now(),
            kind,
            task: task.id(),
            task_kind: task.kind(),
            detail,
        };
        log::info!("{event}");
        self.report.events.push(event);
    }

    /// Adds `task` and, unless it is already complete, everything it
    /// requires. Nodes are stored dependencies-first.
    fn expand(&mut self, task: Box<dyn Task>) -> Result<usize, TaskError> {
        let id = task.id();
        if let Some(pos) = self.on_stack.iter().position(|s| *s == id) {
            let mut cycle = self.on_stack[pos..].to_vec();
            cycle.push(id);
            return Err(TaskError::Cycle(cycle));
        }
        if let Some(&i) = self.index.get(&id) {
            return Ok(i);
        }
        // an earlier failure is not final: the task is simply run again
        if let Ok(true) = task.complete() {
            let i = self.push(task, Vec::new(), State::Done);
            self.log(i, EventKind::Skipped, None);
            return Ok(i);
        }
        self.on_stack.push(id);
        let mut deps = Vec::new();
        for dep in task.requires() {
            deps.push(self.expand(dep)?);
        }
        self.on_stack.pop();
        Ok(self.push(task, deps, State::Pending))
    }

    fn push(&mut self, task: Box<dyn Task>, deps: Vec<usize>, state: State) -> usize {
        let i = self.nodes.len();
        self.index.insert(task.id(), i);
        self.nodes.push(Node { task, deps, state });
        i
    }
}

/// Runs every incomplete task reachable from `root`, each after all of its
/// requirements, polling submitted tasks every `poll_interval`.
///
/// Tasks already complete are skipped without expanding their
/// requirements. A failed task blocks its dependents; independent branches
/// carry on. Only a dependency cycle aborts the run.
pub fn run_graph(root: Box<dyn Task>, sched: &Scheduler, poll_interval: Duration) -> Result<RunReport, TaskError> {
    let mut g = Graph {
        nodes: Vec::new(),
        index: HashMap::new(),
        on_stack: Vec::new(),
        report: RunReport::default(),
    };
    g.expand(root)?;

    loop {
        let mut progress = false;

        for i in 0..g.nodes.len() {
            if g.nodes[i].state != State::Pending {
                continue;
            }
            let dep_states: Vec<State> = g.nodes[i].deps.iter().map(|&d| g.nodes[d].state).collect();
            if dep_states.iter().any(|s| matches!(s, State::Failed | State::Blocked)) {
                g.nodes[i].state = State::Blocked;
                g.log(i, EventKind::Blocked, None);
                progress = true;
            } else if dep_states.iter().all(|s| *s == State::Done) {
                g.log(i, EventKind::Submitted, None);
                match g.nodes[i].task.run(sched) {
                    Ok(()) => g.nodes[i].state = State::Submitted,
                    Err(e) => {
                        g.nodes[i].state = State::Failed;
                        g.log(i, EventKind::Failed, Some(e.to_string()));
                    }
                }
                progress = true;
            }
        }

        for i in 0..g.nodes.len() {
            if g.nodes[i].state != State::Submitted {
                continue;
            }
            match g.nodes[i].task.poll(sched) {
                Ok(false) => {}
                Ok(true) => {
                    g.nodes[i].state = State::Done;
                    g.log(i, EventKind::Done, None);
                    progress = true;
                }
                Err(e) => {
                    g.nodes[i].state = State::Failed;
                    g.log(i, EventKind::Failed, Some(e.to_string()));
                    progress = true;
                }
            }
        }

        let active = g.nodes.iter().any(|n| matches!(n.state, State::Pending | State::Submitted));
        if !active {
            break;
        }
        if !progress {
            thread::sleep(poll_interval);
        }
    }
    Ok(g.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::JobInfo;
    use crate::scheduler::{Job, SchedulerOptions};
    use crate::task::{CommandTask, WrapperTask};
    use std::path::Path;

    fn sched() -> Scheduler {
        Scheduler::local(
            4,
            SchedulerOptions {
                tick: Duration::from_millis(2),
                check_load: false,
            },
        )
    }

    fn cmd(dir: &Path, name: &str, shell: &str, deps: Vec<Box<dyn Task>>) -> Box<dyn Task> {
        Box::new(CommandTask::new(Job::shell(shell, dir.join(name), JobInfo::default())).with_depends(deps))
    }

    const POLL: Duration = Duration::from_millis(2);

    #[test]
    fn diamond_order() {
        let tmp = tempfile::tempdir().unwrap();
        let d = cmd(tmp.path(), "d", "true", vec![]);
        let b = cmd(tmp.path(), "b", "true", vec![d.clone()]);
        let c = cmd(tmp.path(), "c", "true", vec![d.clone()]);
        let a = cmd(tmp.path(), "a", "true", vec![b, c]);
        let s = sched();
        let report = run_graph(a, &s, POLL).unwrap();
        let pos = |name: &str, kind: EventKind| {
            let id = format!("cmd:{}", tmp.path().join(name).display());
            report.events.iter().position(|e| e.task == id && e.kind == kind).unwrap()
        };
        assert!(pos("d", EventKind::Done) < pos("b", EventKind::Submitted));
        assert!(pos("d", EventKind::Done) < pos("c", EventKind::Submitted));
        assert!(pos("b", EventKind::Done) < pos("a", EventKind::Submitted));
        assert!(pos("c", EventKind::Done) < pos("a", EventKind::Submitted));
        assert_eq!(report.jobs_submitted(), 4);
        assert!(report.succeeded());
    }

    #[test]
    fn rerun_is_all_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let root = || -> Box<dyn Task> {
            let a = cmd(tmp.path(), "a", "true", vec![]);
            let b = cmd(tmp.path(), "b", "true", vec![]);
            Box::new(WrapperTask::new("all", vec![a, b]))
        };
        let s = sched();
        let first = run_graph(root(), &s, POLL).unwrap();
        assert_eq!(first.executed(), 3);
        let second = run_graph(root(), &s, POLL).unwrap();
        assert_eq!(second.executed(), 0);
        assert_eq!(second.skipped(), 1);
        // leaves skipped individually when the wrapper has nothing of its own
        let again = run_graph(cmd(tmp.path(), "a", "true", vec![]), &s, POLL).unwrap();
        assert_eq!((again.executed(), again.skipped()), (0, 1));
    }

    #[test]
    fn failure_blocks_dependents_only() {
        let tmp = tempfile::tempdir().unwrap();
        let bad = cmd(tmp.path(), "bad", "exit 1", vec![]);
        let after_bad = cmd(tmp.path(), "after_bad", "true", vec![bad]);
        let good = cmd(tmp.path(), "good", "true", vec![]);
        let root: Box<dyn Task> = Box::new(WrapperTask::new("root", vec![after_bad, good]));
        let s = sched();
        let report = run_graph(root, &s, POLL).unwrap();
        assert_eq!(report.failed(), 1);
        assert_eq!(report.blocked(), 2);
        let done = report.ids(EventKind::Done);
        assert!(done.iter().any(|id| id.ends_with("/good")));
        assert!(!report.ids(EventKind::Submitted).iter().any(|id| id.ends_with("after_bad")));
        assert!(!report.succeeded());
    }

    #[test]
    fn failed_task_is_retried_next_run() {
        let tmp = tempfile::tempdir().unwrap();
        let flag = tmp.path().join("fixed");
        let script = format!("test -e {}", flag.display());
        let s = sched();
        let first = run_graph(cmd(tmp.path(), "x", &script, vec![]), &s, POLL).unwrap();
        assert_eq!(first.failed(), 1);
        std::fs::write(&flag, "").unwrap();
        let second = run_graph(cmd(tmp.path(), "x", &script, vec![]), &s, POLL).unwrap();
        assert_eq!(second.jobs_submitted(), 1);
        assert!(second.succeeded());
    }

    #[test]
    fn stale_running_record_is_resubmitted() {
        let tmp = tempfile::tempdir().unwrap();
        crate::scheduler::JobStatus::running("true", "localhost").write(&tmp.path().join("x")).unwrap();
        let s = sched();
        let report = run_graph(cmd(tmp.path(), "x", "true", vec![]), &s, POLL).unwrap();
        assert_eq!(report.jobs_submitted(), 1);
        assert!(report.succeeded());
    }

    #[derive(Clone)]
    struct Loop {
        id: String,
        next: String,
    }

    impl Task for Loop {
        fn id(&self) -> String {
            self.id.clone()
        }
        fn kind(&self) -> TaskKind {
            TaskKind::Wrapper
        }
        fn complete(&self) -> Result<bool, TaskError> {
            Ok(false)
        }
        fn run(&mut self, _: &Scheduler) -> Result<(), TaskError> {
            Ok(())
        }
        fn requires(&self) -> Vec<Box<dyn Task>> {
            vec![Box::new(Loop {
                id: self.next.clone(),
                next: if self.next == "b" { "c".into() } else { "a".into() },
            })]
        }
        fn clone_box(&self) -> Box<dyn Task> {
            Box::new(self.clone())
        }
    }

    #[test]
    fn cycle_is_reported() {
        let s = sched();
        let err = run_graph(Box::new(Loop { id: "a".into(), next: "b".into() }), &s, POLL).err().unwrap();
        match err {
            TaskError::Cycle(ids) => assert_eq!(ids, ["a", "b", "c", "a"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn event_lines() {
        let e = RunEvent {
            time: DateTime::parse_from_rfc3339("2024-05-06T07:08:09.010Z").unwrap().with_timezone(&Utc),
            kind: EventKind::Submitted,
            task: "cmd:o/p/a".into(),
            task_kind: TaskKind::Command,
            detail: None,
        };
        assert_eq!(e.to_string(), "2024-05-06T07:08:09.010Z submitted cmd:o/p/a");
    }
}

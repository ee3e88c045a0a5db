//! Core-capacity job dispatch.
//!
//! Jobs wait in a FIFO queue. On every wake-up (a submission, a job
//! finishing, or the periodic tick) the dispatcher scans the queue in order
//! and starts each job that fits the free cores of some enabled worker,
//! trying the local worker first and the remaining workers in configuration
//! order. Every running job is watched by its own thread, which writes the
//! job's `job_status.json` and returns the cores when the job ends.

mod local;
pub mod status;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::case::JobInfo;
use crate::config::{WorkerConfig, WorkerKind};
use crate::shell;

pub use local::LocalBackend;
pub use status::{JobStatus, Phase, StatusError, STATUS_FILE, STDERR_FILE, STDOUT_FILE};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("job needs {n_core} cores but the largest enabled worker has {max}")]
    Unschedulable { n_core: u32, max: u32 },
    #[error("job has an empty command")]
    EmptyCommand,
    #[error("cannot prepare output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no workers given")]
    NoWorkers,
    #[error("scheduler is shutting down")]
    ShutDown,
    #[error(transparent)]
    Status(#[from] StatusError),
}

/// An executable command with its resource needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub command: Vec<String>,
    pub output_dir: PathBuf,
    pub env: BTreeMap<String, String>,
    pub n_core: u32,
    pub n_thread: u32,
}

impl Job {
    /// A job running `command` through `sh -c`, with `OMP_NUM_THREADS` set
    /// from `info.n_thread`.
    pub fn shell(command: impl Into<String>, output_dir: impl Into<PathBuf>, info: JobInfo) -> Self {
        let mut env = BTreeMap::new();
        env.insert("OMP_NUM_THREADS".to_string(), info.n_thread.to_string());
        Self {
            command: vec!["sh".into(), "-c".into(), command.into()],
            output_dir: output_dir.into(),
            env,
            n_core: info.n_core,
            n_thread: info.n_thread,
        }
    }

    /// Human-readable command, as recorded in the status file.
    pub fn display_command(&self) -> String {
        match self.command.as_slice() {
            [sh, c, cmd] if sh == "sh" && c == "-c" => cmd.clone(),
            argv => argv.iter().map(|a| shell::quote(a)).collect::<Vec<_>>().join(" "),
        }
    }
}

/// Executes a job on one worker. `execute` blocks until the job has ended
/// and its terminal status is persisted in the local output directory.
pub trait Backend: Send + Sync {
    fn execute(&self, job: &Job, running: &JobStatus) -> JobStatus;

    /// One-minute load average, when the worker can report it.
    fn load_average(&self) -> Option<f64> {
        None
    }
}

/// A worker description plus the backend that runs its jobs.
#[derive(Clone)]
pub struct Worker {
    pub config: WorkerConfig,
    pub backend: Arc<dyn Backend>,
}

impl Worker {
    pub fn new(config: WorkerConfig, backend: Arc<dyn Backend>) -> Self {
        Self { config, backend }
    }

    pub fn local(cores: u32) -> Self {
        Self::new(WorkerConfig::local(cores), Arc::new(LocalBackend))
    }
}

#[derive(Debug, Clone)]
pub struct SchedulerOptions {
    /// Period of the dispatcher's periodic re-scan.
    pub tick: Duration,
    /// Additionally require a worker's load average to be below
    /// `cores - n_core + 1` before placing a job there.
    pub check_load: bool,
}

impl Default for SchedulerOptions {
    fn default() -> Self {
        Self {
            tick: Duration::from_secs(1),
            check_load: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobHandle {
    pub id: JobId,
    pub output_dir: PathBuf,
}

/// What [`Scheduler::poll`] can report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobState {
    /// Queued or running; the job has not been released by its worker.
    Pending,
    Recorded(JobStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedEventKind {
    Start,
    Finish(Phase),
}

/// Dispatcher log entry; appended while holding the scheduler lock, so the
/// order of entries is the order of core allocation and release.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedEvent {
    pub seq: u64,
    pub time: DateTime<Utc>,
    pub kind: SchedEventKind,
    pub job: JobId,
    pub worker: String,
    pub n_core: u32,
    pub output_dir: PathBuf,
}

struct Slot {
    worker: Worker,
    used: u32,
}

struct State {
    queue: VecDeque<(JobId, Job)>,
    slots: Vec<Slot>,
    /// Submitted jobs whose finish has not been logged yet.
    unfinished: HashSet<JobId>,
    running: usize,
    events: Vec<SchedEvent>,
    next_id: u64,
    shutdown: bool,
}

impl State {
    fn log(&mut self, kind: SchedEventKind, job: JobId, worker: &str, n_core: u32, output_dir: &Path) {
        let seq = self.events.len() as u64;
        self.events.push(SchedEvent {
            seq,
            time: Utc::now(),
            kind,
            job,
            worker: worker.to_string(),
            n_core,
            output_dir: output_dir.to_path_buf(),
        });
    }
}

struct Shared {
    state: Mutex<State>,
    wake: Condvar,
    opts: SchedulerOptions,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Dispatches jobs to workers without exceeding any worker's core count.
pub struct Scheduler {
    shared: Arc<Shared>,
    dispatcher: Option<JoinHandle<()>>,
}

impl Scheduler {
    /// Starts the dispatcher thread. The local worker, if any, is tried
    /// first; others keep their given order.
    pub fn new(mut workers: Vec<Worker>, opts: SchedulerOptions) -> Result<Self, SchedulerError> {
        if workers.is_empty() {
            return Err(SchedulerError::NoWorkers);
        }
        workers.sort_by_key(|w| w.config.kind != WorkerKind::Local);
        let state = State {
            queue: VecDeque::new(),
            slots: workers.into_iter().map(|worker| Slot { worker, used: 0 }).collect(),
            unfinished: HashSet::new(),
            running: 0,
            events: Vec::new(),
            next_id: 0,
            shutdown: false,
        };
        let shared = Arc::new(Shared {
            state: Mutex::new(state),
            wake: Condvar::new(),
            opts,
        });
        let dispatcher = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("automan-dispatch".into())
                .spawn(move || dispatch_loop(&shared))
                .expect("spawn dispatcher thread")
        };
        Ok(Self {
            shared,
            dispatcher: Some(dispatcher),
        })
    }

    /// A scheduler with a single local worker of `cores` cores.
    pub fn local(cores: u32, opts: SchedulerOptions) -> Self {
        Self::new(vec![Worker::local(cores)], opts).expect("one worker")
    }

    /// Queues `job`. Any earlier status record in its output directory is
    /// removed, so polling only ever sees this submission's progress.
    pub fn submit(&self, job: Job) -> Result<JobHandle, SchedulerError> {
        if job.command.is_empty() {
            return Err(SchedulerError::EmptyCommand);
        }
        let mut st = self.shared.lock();
        if st.shutdown {
            return Err(SchedulerError::ShutDown);
        }
        let max = st.slots.iter().filter(|s| s.worker.config.enabled).map(|s| s.worker.config.cores).max().unwrap_or(0);
        if job.n_core > max || job.n_core == 0 {
            return Err(SchedulerError::Unschedulable { n_core: job.n_core, max });
        }
        let dir_err = |source| SchedulerError::OutputDir {
            path: job.output_dir.clone(),
            source,
        };
        fs::create_dir_all(&job.output_dir).map_err(dir_err)?;
        match fs::remove_file(job.output_dir.join(STATUS_FILE)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(dir_err(e)),
            _ => {}
        }
        let id = JobId(st.next_id);
        st.next_id += 1;
        let handle = JobHandle {
            id,
            output_dir: job.output_dir.clone(),
        };
        st.unfinished.insert(id);
        st.queue.push_back((id, job));
        drop(st);
        self.shared.wake.notify_all();
        Ok(handle)
    }

    /// Current state of a submitted job. The status record is read only
    /// once the job has finished and its cores are released, so a job seen
    /// terminal here is also terminal in the event log.
    pub fn poll(&self, handle: &JobHandle) -> Result<JobState, SchedulerError> {
        if self.shared.lock().unfinished.contains(&handle.id) {
            return Ok(JobState::Pending);
        }
        Ok(match JobStatus::read(&handle.output_dir)? {
            Some(status) => JobState::Recorded(status),
            None => JobState::Pending,
        })
    }

    /// Cores of `worker` not held by jobs this scheduler is running.
    pub fn free_cores(&self, worker: &str) -> Option<u32> {
        let st = self.shared.lock();
        st.slots
            .iter()
            .find(|s| s.worker.config.name == worker)
            .map(|s| s.worker.config.cores.saturating_sub(s.used))
    }

    pub fn events(&self) -> Vec<SchedEvent> {
        self.shared.lock().events.clone()
    }

    pub fn queued(&self) -> usize {
        self.shared.lock().queue.len()
    }

    pub fn running(&self) -> usize {
        self.shared.lock().running
    }

    pub fn worker_names(&self) -> Vec<String> {
        self.shared.lock().slots.iter().map(|s| s.worker.config.name.clone()).collect()
    }

    /// Blocks until nothing is queued or running.
    pub fn wait_idle(&self) {
        let mut st = self.shared.lock();
        while !st.queue.is_empty() || st.running > 0 {
            st = self.shared.wake.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Lets queued and running jobs finish, then stops the dispatcher.
    pub fn shutdown(mut self) -> Vec<SchedEvent> {
        self.stop();
        self.events()
    }

    fn stop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.wake.notify_all();
        if let Some(h) = self.dispatcher.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.stop();
    }
}

fn dispatch_loop(shared: &Arc<Shared>) {
    loop {
        let loads: Option<Vec<Option<f64>>> = if shared.opts.check_load {
            let backends: Vec<_> = shared.lock().slots.iter().map(|s| Arc::clone(&s.worker.backend)).collect();
            Some(backends.iter().map(|b| b.load_average()).collect())
        } else {
            None
        };

        let mut st = shared.lock();
        let mut i = 0;
        while i < st.queue.len() {
            let need = st.queue[i].1.n_core;
            let slot = st.slots.iter().enumerate().position(|(k, s)| {
                let cfg = &s.worker.config;
                let fits = cfg.enabled && cfg.cores - s.used >= need;
                let calm = match loads.as_ref().and_then(|l| l[k]) {
                    Some(load) => load < f64::from(cfg.cores - need + 1),
                    None => true,
                };
                fits && calm
            });
            let Some(k) = slot else {
                i += 1;
                continue;
            };
            let (id, job) = st.queue.remove(i).expect("index in range");
            st.slots[k].used += need;
            st.running += 1;
            let worker = st.slots[k].worker.clone();
            st.log(SchedEventKind::Start, id, &worker.config.name, need, &job.output_dir);
            spawn_watcher(Arc::clone(shared), id, job, worker, k);
        }
        if st.shutdown && st.queue.is_empty() && st.running == 0 {
            return;
        }
        let tick = shared.opts.tick;
        drop(shared.wake.wait_timeout(st, tick).unwrap_or_else(|e| e.into_inner()));
    }
}

fn spawn_watcher(shared: Arc<Shared>, id: JobId, job: Job, worker: Worker, slot: usize) {
    thread::Builder::new()
        .name(format!("automan-job-{}", id.0))
        .spawn(move || {
            let running = JobStatus::running(job.display_command(), &worker.config.name);
            let status = match running.write(&job.output_dir) {
                Ok(()) => worker.backend.execute(&job, &running),
                Err(e) => {
                    log::error!("{e}");
                    let failed = running.finished(None);
                    let _ = failed.write(&job.output_dir);
                    failed
                }
            };
            let mut st = shared.lock();
            st.slots[slot].used -= job.n_core;
            st.running -= 1;
            st.unfinished.remove(&id);
            st.log(SchedEventKind::Finish(status.phase), id, &worker.config.name, job.n_core, &job.output_dir);
            drop(st);
            shared.wake.notify_all();
        })
        .expect("spawn job watcher");
}

/// Recomputes per-worker core usage from an event log, returning the peak
/// usage seen on each worker.
pub fn replay_peak_usage(events: &[SchedEvent]) -> BTreeMap<String, u32> {
    let mut used: BTreeMap<String, u32> = BTreeMap::new();
    let mut peak: BTreeMap<String, u32> = BTreeMap::new();
    for e in events {
        let u = used.entry(e.worker.clone()).or_default();
        match e.kind {
            SchedEventKind::Start => *u += e.n_core,
            SchedEventKind::Finish(_) => *u -= e.n_core,
        }
        let p = peak.entry(e.worker.clone()).or_default();
        *p = (*p).max(*u);
    }
    peak
}

/// True when `dir` holds a successful status record.
pub fn is_done(dir: &Path) -> bool {
    matches!(JobStatus::read(dir), Ok(Some(s)) if s.is_done())
}

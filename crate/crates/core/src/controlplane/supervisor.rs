//! In-process supervisor for training jobs and inference replicas.
//!
//! Jobs run to completion and are restarted at most `max_restarts` times.
//! Replicas are kept alive until explicitly stopped. Workers are threads that
//! poll their [`TaskControl`] for kill and stop requests; a panic inside a
//! worker counts as a failed attempt.

use std::any::Any;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::entities::Id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKey {
    Job { deployment_id: Id, model_id: Id },
    Replica { inference_id: Id, index: u32 },
}

impl std::fmt::Display for TaskKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKey::Job {
                deployment_id,
                model_id,
            } => write!(f, "job {deployment_id}/{model_id}"),
            TaskKey::Replica {
                inference_id,
                index,
            } => write!(f, "replica {inference_id}/{index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskFailure {
    pub message: String,
    /// Restarting cannot help (bad input, invalid spec).
    pub permanent: bool,
}

impl TaskFailure {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            permanent: false,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            permanent: true,
        }
    }
}

/// Per-attempt view a worker gets of its supervision state.
#[derive(Debug, Clone)]
pub struct TaskControl {
    attempt: u32,
    kill: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
}

impl TaskControl {
    /// A control that is never killed; for workers run outside a supervisor.
    pub fn detached(attempt: u32) -> Self {
        Self {
            attempt,
            kill: Arc::new(AtomicBool::new(false)),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Zero on the first run, then the number of restarts so far.
    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn killed(&self) -> bool {
        self.kill.load(Ordering::SeqCst)
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// True once the worker should bail out at its next checkpoint.
    pub fn should_exit(&self) -> bool {
        self.killed() || self.stopped()
    }

    /// Sleeps up to `d`, waking early on kill or stop.
    pub fn sleep(&self, d: Duration) {
        let until = Instant::now() + d;
        while !self.should_exit() {
            let now = Instant::now();
            if now >= until {
                break;
            }
            thread::sleep((until - now).min(Duration::from_millis(10)));
        }
    }
}

pub type Work = Arc<dyn Fn(&TaskControl) -> Result<(), TaskFailure> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskEvent {
    Started {
        key: TaskKey,
        attempt: u32,
    },
    Failed {
        key: TaskKey,
        attempt: u32,
        message: String,
    },
    Restarting {
        key: TaskKey,
        restart_count: u32,
    },
    Completed {
        key: TaskKey,
    },
    GaveUp {
        key: TaskKey,
        restart_count: u32,
        message: String,
    },
    Stopped {
        key: TaskKey,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Running,
    Restarting,
    Completed,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    RunToCompletion,
    KeepAlive,
}

type Listener = Arc<dyn Fn(&TaskEvent) + Send + Sync>;

struct Slot {
    state: TaskState,
    restarts: u32,
    kill: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

struct Inner {
    max_restarts: u32,
    restart_delay: Duration,
    tasks: Mutex<BTreeMap<TaskKey, Slot>>,
    events: Mutex<Vec<TaskEvent>>,
    listener: Mutex<Option<Listener>>,
}

impl Inner {
    fn tasks(&self) -> MutexGuard<'_, BTreeMap<TaskKey, Slot>> {
        self.tasks.lock().expect("supervisor poisoned")
    }

    fn emit(&self, event: TaskEvent) {
        match &event {
            TaskEvent::Failed {
                key,
                attempt,
                message,
            } => {
                tracing::warn!(%key, attempt, "worker failed: {message}")
            }
            TaskEvent::GaveUp {
                key, restart_count, ..
            } => {
                tracing::error!(%key, restart_count, "restart budget exhausted")
            }
            other => tracing::debug!(?other, "supervisor"),
        }
        let listener = self.listener.lock().expect("supervisor poisoned").clone();
        if let Some(l) = listener {
            l(&event);
        }
        self.events.lock().expect("supervisor poisoned").push(event);
    }

    fn set(&self, key: TaskKey, state: TaskState, restarts: u32) {
        if let Some(slot) = self.tasks().get_mut(&key) {
            slot.state = state;
            slot.restarts = restarts;
        }
    }
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

#[derive(Clone)]
pub struct Supervisor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Supervisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Supervisor")
            .field("max_restarts", &self.inner.max_restarts)
            .finish_non_exhaustive()
    }
}

impl Supervisor {
    pub fn new(max_restarts: u32, restart_delay: Duration) -> Self {
        Self {
            inner: Arc::new(Inner {
                max_restarts,
                restart_delay,
                tasks: Mutex::new(BTreeMap::new()),
                events: Mutex::new(Vec::new()),
                listener: Mutex::new(None),
            }),
        }
    }

    pub fn max_restarts(&self) -> u32 {
        self.inner.max_restarts
    }

    /// Called synchronously for every event, from the worker's thread.
    pub fn set_listener(&self, f: impl Fn(&TaskEvent) + Send + Sync + 'static) {
        *self.inner.listener.lock().expect("supervisor poisoned") = Some(Arc::new(f));
    }

    /// Runs `work` until it succeeds, fails permanently or exceeds the
    /// restart budget. `restarts_so_far` carries the count across backend
    /// restarts.
    pub fn spawn_job(&self, key: TaskKey, restarts_so_far: u32, work: Work) {
        self.spawn(key, restarts_so_far, work, Policy::RunToCompletion)
    }

    /// Keeps `work` running until [`Supervisor::stop`].
    pub fn spawn_replica(&self, key: TaskKey, work: Work) {
        self.spawn(key, 0, work, Policy::KeepAlive)
    }

    fn spawn(&self, key: TaskKey, restarts: u32, work: Work, policy: Policy) {
        let kill = Arc::new(AtomicBool::new(false));
        let stop = Arc::new(AtomicBool::new(false));
        let mut tasks = self.inner.tasks();
        if let Some(old) = tasks.get(&key) {
            if matches!(old.state, TaskState::Running | TaskState::Restarting) {
                return;
            }
        }
        let inner = Arc::clone(&self.inner);
        let (k, s) = (Arc::clone(&kill), Arc::clone(&stop));
        let thread = thread::Builder::new()
            .name(format!("{key}"))
            .spawn(move || run_loop(inner, key, restarts, work, policy, k, s))
            .expect("spawn worker thread");
        tasks.insert(
            key,
            Slot {
                state: TaskState::Running,
                restarts,
                kill,
                stop,
                thread: Some(thread),
            },
        );
    }

    /// Simulates a crash: the worker exits at its next checkpoint and the
    /// restart policy applies.
    pub fn kill(&self, key: TaskKey) -> bool {
        match self.inner.tasks().get(&key) {
            Some(slot) if slot.state == TaskState::Running => {
                slot.kill.store(true, Ordering::SeqCst);
                true
            }
            _ => false,
        }
    }

    /// Stops the task for good and waits for its thread.
    pub fn stop(&self, key: TaskKey) {
        let handle = {
            let mut tasks = self.inner.tasks();
            let Some(slot) = tasks.get_mut(&key) else {
                return;
            };
            slot.stop.store(true, Ordering::SeqCst);
            slot.thread.take()
        };
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    pub fn stop_all(&self) {
        let keys: Vec<TaskKey> = self.inner.tasks().keys().copied().collect();
        for k in &keys {
            if let Some(slot) = self.inner.tasks().get(k) {
                slot.stop.store(true, Ordering::SeqCst);
            }
        }
        for k in keys {
            self.stop(k);
        }
    }

    pub fn state(&self, key: TaskKey) -> Option<(TaskState, u32)> {
        self.inner.tasks().get(&key).map(|s| (s.state, s.restarts))
    }

    /// Replicas of `inference_id` currently executing their loop.
    pub fn live_replicas(&self, inference_id: Id) -> usize {
        self.inner
            .tasks()
            .iter()
            .filter(|(k, s)| {
                matches!(k, TaskKey::Replica { inference_id: i, .. } if *i == inference_id)
                    && s.state == TaskState::Running
            })
            .count()
    }

    pub fn events(&self) -> Vec<TaskEvent> {
        self.inner
            .events
            .lock()
            .expect("supervisor poisoned")
            .clone()
    }

    /// Blocks until the task reaches a terminal state or `timeout` elapses.
    pub fn wait_terminal(&self, key: TaskKey, timeout: Duration) -> Option<TaskState> {
        let until = Instant::now() + timeout;
        loop {
            match self.state(key) {
                Some((s @ (TaskState::Completed | TaskState::Failed | TaskState::Stopped), _)) => {
                    return Some(s)
                }
                None => return None,
                _ if Instant::now() >= until => return None,
                _ => thread::sleep(Duration::from_millis(10)),
            }
        }
    }
}

fn run_loop(
    inner: Arc<Inner>,
    key: TaskKey,
    mut restarts: u32,
    work: Work,
    policy: Policy,
    kill: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
) {
    loop {
        kill.store(false, Ordering::SeqCst);
        inner.set(key, TaskState::Running, restarts);
        inner.emit(TaskEvent::Started {
            key,
            attempt: restarts,
        });
        let ctl = TaskControl {
            attempt: restarts,
            kill: Arc::clone(&kill),
            stop: Arc::clone(&stop),
        };
        let result = catch_unwind(AssertUnwindSafe(|| work(&ctl)))
            .unwrap_or_else(|p| Err(TaskFailure::transient(panic_message(p))));

        if stop.load(Ordering::SeqCst) {
            inner.set(key, TaskState::Stopped, restarts);
            inner.emit(TaskEvent::Stopped { key });
            return;
        }
        let failure = match result {
            Ok(()) if policy == Policy::RunToCompletion => {
                inner.set(key, TaskState::Completed, restarts);
                inner.emit(TaskEvent::Completed { key });
                return;
            }
            Ok(()) => TaskFailure::transient("replica exited"),
            Err(f) => f,
        };
        inner.emit(TaskEvent::Failed {
            key,
            attempt: restarts,
            message: failure.message.clone(),
        });
        if policy == Policy::RunToCompletion
            && (failure.permanent || restarts >= inner.max_restarts)
        {
            inner.set(key, TaskState::Failed, restarts);
            inner.emit(TaskEvent::GaveUp {
                key,
                restart_count: restarts,
                message: failure.message,
            });
            return;
        }
        restarts += 1;
        inner.set(key, TaskState::Restarting, restarts);
        inner.emit(TaskEvent::Restarting {
            key,
            restart_count: restarts,
        });
        TaskControl {
            attempt: restarts,
            kill: Arc::new(AtomicBool::new(false)),
            stop: Arc::clone(&stop),
        }
        .sleep(inner.restart_delay);
        if stop.load(Ordering::SeqCst) {
            inner.set(key, TaskState::Stopped, restarts);
            inner.emit(TaskEvent::Stopped { key });
            return;
        }
    }
}

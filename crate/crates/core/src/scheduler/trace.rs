//! Execution traces and the totally ordered event channel they come from.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::task::{TaskId, TaskState};
use crate::memguard::{AccessEvent, AccessKind, CellId, Color, RecolorEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Ready,
    Start,
    Finish,
    Fail { cause: String },
    Steal { victim: usize },
    Resize { from: usize, to: usize },
    Block { cell: CellId },
    Signal { cell: CellId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Position in the run's single event sequence.
    pub seq: u64,
    pub worker: usize,
    pub task: Option<TaskId>,
    pub kind: EventKind,
    /// Microseconds since the run began. Informational only.
    pub wall_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    /// Set when the run stopped before every task finished.
    pub partial: bool,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Last lifecycle state reached by each task that appears in the trace.
    pub fn task_states(&self) -> BTreeMap<TaskId, TaskState> {
        let mut states = BTreeMap::new();
        for e in &self.events {
            let (Some(task), Some(state)) = (&e.task, lifecycle_state(&e.kind)) else {
                continue;
            };
            states.insert(task.clone(), state);
        }
        states
    }

    /// Sequence numbers of the start and finish events of each task.
    pub fn spans(&self) -> BTreeMap<TaskId, TaskSpan> {
        let mut spans: BTreeMap<TaskId, TaskSpan> = BTreeMap::new();
        for e in &self.events {
            let Some(task) = &e.task else { continue };
            let span = spans.entry(task.clone()).or_default();
            match e.kind {
                EventKind::Start => {
                    span.start = Some(e.seq);
                    span.worker = Some(e.worker);
                }
                EventKind::Finish | EventKind::Fail { .. } => span.finish = Some(e.seq),
                _ => {}
            }
        }
        spans
    }

    pub fn steals(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Steal { .. }))
            .count()
    }

    /// Lifecycle problems: out-of-order state changes, repeated starts or
    /// finishes, and non-increasing sequence numbers per worker. A complete
    /// trace must also leave every task in a terminal state.
    pub fn lifecycle_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut last_seq: BTreeMap<usize, u64> = BTreeMap::new();
        let mut states: BTreeMap<&TaskId, TaskState> = BTreeMap::new();
        for e in &self.events {
            if let Some(prev) = last_seq.insert(e.worker, e.seq) {
                if e.seq <= prev {
                    errors.push(format!("worker {} sequence {} after {}", e.worker, e.seq, prev));
                }
            }
            let (Some(task), Some(next)) = (&e.task, lifecycle_state(&e.kind)) else {
                continue;
            };
            let cur = states.get(task).copied().unwrap_or(TaskState::Pending);
            if !cur.can_become(next) {
                errors.push(format!("task {task}: {cur:?} -> {next:?} at seq {}", e.seq));
            }
            states.insert(task, next);
        }
        if !self.partial {
            for (task, s) in states {
                if !matches!(s, TaskState::Done | TaskState::Failed) {
                    errors.push(format!("task {task} ended in state {s:?}"));
                }
            }
        }
        errors
    }
}

fn lifecycle_state(kind: &EventKind) -> Option<TaskState> {
    match kind {
        EventKind::Ready => Some(TaskState::Ready),
        EventKind::Start => Some(TaskState::Running),
        EventKind::Finish => Some(TaskState::Done),
        EventKind::Fail { .. } => Some(TaskState::Failed),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskSpan {
    pub start: Option<u64>,
    pub finish: Option<u64>,
    pub worker: Option<usize>,
}

#[derive(Default)]
struct LogState {
    next_seq: u64,
    events: Vec<TraceEvent>,
    accesses: Vec<AccessEvent>,
    recolors: Vec<RecolorEvent>,
}

impl LogState {
    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }
}

/// Append-only channel shared by the scheduler and guarded cells. Every
/// record gets the next number of one sequence, so lifecycle events and
/// memory accesses share a single total order.
pub struct EventLog {
    state: Mutex<LogState>,
    started: Instant,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog {
            state: Mutex::new(LogState::default()),
            started: Instant::now(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LogState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn wall(&self) -> u64 {
        self.started.elapsed().as_micros() as u64
    }

    pub fn record(&self, worker: usize, task: Option<&TaskId>, kind: EventKind) -> u64 {
        let wall_us = self.wall();
        let mut st = self.lock();
        let seq = st.take_seq();
        st.events.push(TraceEvent {
            seq,
            worker,
            task: task.cloned(),
            kind,
            wall_us,
        });
        seq
    }

    pub fn record_access(
        &self,
        cell: &CellId,
        task: &TaskId,
        worker: usize,
        kind: AccessKind,
        held: bool,
    ) -> AccessEvent {
        let mut st = self.lock();
        let seq = st.take_seq();
        let ev = AccessEvent {
            cell: cell.clone(),
            task: task.clone(),
            worker,
            kind,
            seq,
            held,
        };
        st.accesses.push(ev.clone());
        ev
    }

    pub fn record_recolor(&self, cell: &CellId, from: Color, to: Color) {
        let mut st = self.lock();
        let seq = st.take_seq();
        st.recolors.push(RecolorEvent {
            cell: cell.clone(),
            from,
            to,
            seq,
        });
    }

    pub fn trace(&self, partial: bool) -> ExecutionTrace {
        ExecutionTrace {
            events: self.lock().events.clone(),
            partial,
        }
    }

    pub fn accesses(&self) -> Vec<AccessEvent> {
        self.lock().accesses.clone()
    }

    pub fn recolors(&self) -> Vec<RecolorEvent> {
        self.lock().recolors.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forged_out_of_order_trace_is_caught() {
        let log = EventLog::new();
        let t = TaskId::new("a", 0);
        log.record(0, Some(&t), EventKind::Ready);
        log.record(0, Some(&t), EventKind::Finish);
        let errs = log.trace(false).lifecycle_errors();
        assert_eq!(errs.len(), 1, "{errs:?}");
    }

    #[test]
    fn complete_lifecycle_is_clean() {
        let log = EventLog::new();
        let t = TaskId::new("a", 0);
        log.record(0, Some(&t), EventKind::Ready);
        log.record(1, Some(&t), EventKind::Steal { victim: 0 });
        log.record(1, Some(&t), EventKind::Start);
        log.record(1, Some(&t), EventKind::Finish);
        let trace = log.trace(false);
        assert!(trace.lifecycle_errors().is_empty());
        assert_eq!(trace.task_states()[&t], TaskState::Done);
        assert_eq!(trace.steals(), 1);
        let span = trace.spans()[&t];
        assert_eq!((span.start, span.finish, span.worker), (Some(2), Some(3), Some(1)));
    }

    #[test]
    fn unfinished_task_only_allowed_in_partial_trace() {
        let log = EventLog::new();
        let t = TaskId::new("a", 0);
        log.record(0, Some(&t), EventKind::Ready);
        assert_eq!(log.trace(false).lifecycle_errors().len(), 1);
        assert!(log.trace(true).lifecycle_errors().is_empty());
    }
}

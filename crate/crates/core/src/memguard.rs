//! Guarded shared cells with ownership colors, full access logging, and
//! post-hoc race classification over the recorded happens-before order.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;
use crate::entity::EntityId;
use crate::graph::Hypergraph;
use crate::graph::flat_view;
use crate::scheduler::task::TaskId;
use crate::scheduler::trace::{EventKind, EventLog, ExecutionTrace};
use crate::value::Value;

pub type CellId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellPolicy {
    /// Writers are serialized by an exclusive write lock; reads are free.
    Shadow,
    /// All accesses must come from the current color owner.
    Color,
    /// Monitored only. Conflicting unordered accesses are data races.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Unowned,
    Worker(usize),
    Entity(EntityId),
}

/// What a color binds to when a cell is first written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorBinding {
    #[default]
    Entity,
    Worker,
}

/// Response to a foreign access on a colored cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Wait until the owner releases the cell (bounded by the block timeout).
    Blocked,
    #[default]
    Signaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardConfig {
    pub disposition: Disposition,
    pub binding: ColorBinding,
    pub block_timeout: Duration,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            disposition: Disposition::Signaled,
            binding: ColorBinding::Entity,
            block_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub cell: CellId,
    pub task: TaskId,
    pub worker: usize,
    pub kind: AccessKind,
    pub seq: u64,
    /// The access was serialized by the cell (shadow write lock or color).
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecolorEvent {
    pub cell: CellId,
    pub from: Color,
    pub to: Color,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("cell `{0}` is not registered")]
    UnknownCell(CellId),
    #[error("cell `{0}` is already registered")]
    DuplicateCell(CellId),
    #[error("task {task} may not access cell `{cell}` owned by {owner:?}")]
    ColorViolationSignal {
        cell: CellId,
        task: TaskId,
        owner: Color,
    },
}

/// Who is touching a cell, and where to log it.
pub struct Accessor<'a> {
    pub task: &'a TaskId,
    pub worker: usize,
    pub log: &'a EventLog,
}

struct CellState {
    value: Value,
    color: Color,
}

pub struct ColoredCell {
    id: CellId,
    policy: CellPolicy,
    state: Mutex<CellState>,
    write_lock: Mutex<()>,
    released: Condvar,
}

impl ColoredCell {
    fn lock(&self) -> MutexGuard<'_, CellState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn policy(&self) -> CellPolicy {
        self.policy
    }
}

/// The set of guarded cells a program may share between kernels.
#[derive(Default)]
pub struct Memory {
    cells: BTreeMap<CellId, ColoredCell>,
    config: GuardConfig,
}

impl Memory {
    pub fn new(config: GuardConfig) -> Self {
        Memory {
            cells: BTreeMap::new(),
            config,
        }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.config
    }

    pub fn register(
        &mut self,
        id: impl Into<CellId>,
        policy: CellPolicy,
        initial: Value,
    ) -> Result<(), MemError> {
        let id = id.into();
        if self.cells.contains_key(&id) {
            return Err(MemError::DuplicateCell(id));
        }
        self.cells.insert(
            id.clone(),
            ColoredCell {
                id,
                policy,
                state: Mutex::new(CellState {
                    value: initial,
                    color: Color::Unowned,
                }),
                write_lock: Mutex::new(()),
                released: Condvar::new(),
            },
        );
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_ids(&self) -> impl Iterator<Item = &CellId> {
        self.cells.keys()
    }

    /// Current payload, without logging an access.
    pub fn peek(&self, id: &str) -> Option<Value> {
        self.cells.get(id).map(|c| c.lock().value.clone())
    }

    pub fn color(&self, id: &str) -> Option<Color> {
        self.cells.get(id).map(|c| c.lock().color.clone())
    }

    fn cell(&self, id: &CellId) -> Result<&ColoredCell, MemError> {
        self.cells
            .get(id)
            .ok_or_else(|| MemError::UnknownCell(id.clone()))
    }

    fn caller_color(&self, acc: &Accessor<'_>) -> Color {
        match self.config.binding {
            ColorBinding::Entity => Color::Entity(acc.task.entity.clone()),
            ColorBinding::Worker => Color::Worker(acc.worker),
        }
    }

    /// Takes the state lock, waiting out or rejecting foreign owners of a
    /// colored cell.
    fn admit<'c>(
        &self,
        cell: &'c ColoredCell,
        acc: &Accessor<'_>,
    ) -> Result<MutexGuard<'c, CellState>, MemError> {
        let mut st = cell.lock();
        if cell.policy != CellPolicy::Color {
            return Ok(st);
        }
        let me = self.caller_color(acc);
        let allowed = |c: &Color| *c == Color::Unowned || *c == me;
        if allowed(&st.color) {
            return Ok(st);
        }
        let signal = |owner: Color| {
            acc.log.record(
                acc.worker,
                Some(acc.task),
                EventKind::Signal {
                    cell: cell.id.clone(),
                },
            );
            MemError::ColorViolationSignal {
                cell: cell.id.clone(),
                task: acc.task.clone(),
                owner,
            }
        };
        if self.config.disposition == Disposition::Signaled {
            return Err(signal(st.color.clone()));
        }
        acc.log.record(
            acc.worker,
            Some(acc.task),
            EventKind::Block {
                cell: cell.id.clone(),
            },
        );
        let deadline = Instant::now() + self.config.block_timeout;
        while !allowed(&st.color) {
            let now = Instant::now();
            if now >= deadline {
                return Err(signal(st.color.clone()));
            }
            st = cell
                .released
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        Ok(st)
    }

    pub fn cell_read(&self, id: &CellId, acc: &Accessor<'_>) -> Result<Value, MemError> {
        let cell = self.cell(id)?;
        let st = self.admit(cell, acc)?;
        let held = cell.policy == CellPolicy::Color;
        acc.log
            .record_access(id, acc.task, acc.worker, AccessKind::Read, held);
        Ok(st.value.clone())
    }

    pub fn cell_write(&self, id: &CellId, acc: &Accessor<'_>, value: Value) -> Result<(), MemError> {
        let cell = self.cell(id)?;
        let _writer = match cell.policy {
            CellPolicy::Shadow => Some(cell.write_lock.lock().unwrap_or_else(|p| p.into_inner())),
            _ => None,
        };
        let mut st = self.admit(cell, acc)?;
        if cell.policy == CellPolicy::Color && st.color == Color::Unowned {
            let me = self.caller_color(acc);
            acc.log.record_recolor(id, Color::Unowned, me.clone());
            st.color = me;
        }
        let held = cell.policy != CellPolicy::Plain;
        acc.log
            .record_access(id, acc.task, acc.worker, AccessKind::Write, held);
        st.value = value;
        Ok(())
    }

    /// Returns every cell colored `owner` to `Unowned` and wakes blocked
    /// contenders.
    pub fn release(&self, owner: &Color, log: &EventLog) {
        for cell in self.cells.values().filter(|c| c.policy == CellPolicy::Color) {
            let mut st = cell.lock();
            if &st.color == owner {
                log.record_recolor(&cell.id, owner.clone(), Color::Unowned);
                st.color = Color::Unowned;
                cell.released.notify_all();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceClass {
    /// Unordered conflicting accesses that the cell serialized.
    GeneralRace,
    /// Unordered conflicting accesses with no serialization at all.
    DataRace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RacePair {
    pub first: AccessEvent,
    pub second: AccessEvent,
    pub class: RaceClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RaceReport {
    pub pairs: Vec<RacePair>,
    pub disposition: Disposition,
}

impl RaceReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn data_races(&self) -> impl Iterator<Item = &RacePair> {
        self.pairs.iter().filter(|p| p.class == RaceClass::DataRace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RaceError {
    #[error("access at seq {seq} by {task} lies outside that task's span in the trace")]
    TimestampDomainMismatch { seq: u64, task: TaskId },
}

/// Happens-before between started tasks: hard edges of the graph plus
/// program order on each worker, closed transitively.
pub(crate) struct HappensBefore {
    index: HashMap<TaskId, usize>,
    before: Vec<BitSet>,
}

impl HappensBefore {
    pub fn build(trace: &ExecutionTrace, g: &Hypergraph) -> Self {
        let spans = trace.spans();
        let mut tasks: Vec<(u64, TaskId, usize)> = spans
            .iter()
            .filter_map(|(t, s)| Some((s.start?, t.clone(), s.worker?)))
            .collect();
        tasks.sort();
        let n = tasks.len();
        let index: HashMap<TaskId, usize> = tasks
            .iter()
            .enumerate()
            .map(|(i, (_, t, _))| (t.clone(), i))
            .collect();
        let mut instances: HashMap<&EntityId, Vec<usize>> = HashMap::new();
        for (i, (_, t, _)) in tasks.iter().enumerate() {
            instances.entry(&t.entity).or_default().push(i);
        }
        let mut hard_preds: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
        for (a, b) in flat_view(g).hard_pairs() {
            hard_preds.entry(b).or_default().push(a);
        }

        let mut before: Vec<BitSet> = Vec::with_capacity(n);
        let mut last_on_worker: HashMap<usize, usize> = HashMap::new();
        let mut entity_union: HashMap<EntityId, BitSet> = HashMap::new();
        for (i, (_, task, worker)) in tasks.iter().enumerate() {
            let mut set = BitSet::new(n);
            if let Some(&p) = last_on_worker.get(worker) {
                set.insert(p);
                set.union_with(&before[p]);
            }
            for pred in hard_preds.get(&task.entity).into_iter().flatten() {
                let union = entity_union.entry(pred.clone()).or_insert_with(|| {
                    let mut u = BitSet::new(n);
                    for &k in instances.get(pred).into_iter().flatten().filter(|&&k| k < i) {
                        u.insert(k);
                        u.union_with(&before[k]);
                    }
                    u
                });
                set.union_with(union);
            }
            last_on_worker.insert(*worker, i);
            before.push(set);
        }
        HappensBefore { index, before }
    }

    pub fn ordered(&self, a: &TaskId, b: &TaskId) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.before[j].contains(i) || self.before[i].contains(j),
            _ => false,
        }
    }
}

/// Flags every pair of accesses to the same cell, from different tasks,
/// with at least one write, that is unordered by happens-before.
pub fn analyze_races(
    trace: &ExecutionTrace,
    events: &[AccessEvent],
    g: &Hypergraph,
) -> Result<RaceReport, RaceError> {
    analyze_races_with(trace, events, g, Disposition::default())
}

pub fn analyze_races_with(
    trace: &ExecutionTrace,
    events: &[AccessEvent],
    g: &Hypergraph,
    disposition: Disposition,
) -> Result<RaceReport, RaceError> {
    let spans = trace.spans();
    for e in events {
        let inside = spans.get(&e.task).is_some_and(|s| {
            s.start.is_some_and(|st| st <= e.seq)
                && s.finish.is_none_or(|f| e.seq <= f)
                && (s.finish.is_some() || trace.partial)
        });
        if !inside {
            return Err(RaceError::TimestampDomainMismatch {
                seq: e.seq,
                task: e.task.clone(),
            });
        }
    }
    let hb = HappensBefore::build(trace, g);
    let mut by_cell: BTreeMap<&CellId, Vec<&AccessEvent>> = BTreeMap::new();
    for e in events {
        by_cell.entry(&e.cell).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for list in by_cell.values_mut() {
        list.sort_by_key(|e| e.seq);
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                let conflicting = a.kind == AccessKind::Write || b.kind == AccessKind::Write;
                if !conflicting || a.task == b.task || hb.ordered(&a.task, &b.task) {
                    continue;
                }
                let class = if !a.held && !b.held {
                    RaceClass::DataRace
                } else {
                    RaceClass::GeneralRace
                };
                pairs.push(RacePair {
                    first: (*a).clone(),
                    second: (*b).clone(),
                    class,
                });
            }
        }
    }
    Ok(RaceReport { pairs, disposition })
}

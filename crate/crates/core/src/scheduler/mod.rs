//! The micro scheduler: runs a flattened hypergraph on a work-stealing worker
//! pool, or one task at a time in a seeded topological order.

pub mod config;
mod engine;
pub mod task;
pub mod trace;

pub use config::{resize_pool, ConfigError, Mode, SchedulerConfig};
pub use engine::{run, run_parallel, run_sequential};
pub use task::{block_ranges, partition_map, Partition, PartitionError, Task, TaskId, TaskState};
pub use trace::{EventKind, EventLog, ExecutionTrace, TaskSpan, TraceEvent};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::Violation;
use crate::entity::{EntityError, EntityId};
use crate::graph::GraphError;
use crate::kernel::KernelRegistry;
use crate::memguard::{AccessEvent, Memory, RaceReport, RecolorEvent};
use crate::value::{DataType, Value};

/// Named streams: program inputs, and every output published during a run.
pub type StreamData = BTreeMap<String, Value>;

/// Kernels plus the guarded cells they may share.
#[derive(Default)]
pub struct Runtime {
    kernels: KernelRegistry,
    memory: Memory,
}

impl Runtime {
    pub fn new(kernels: KernelRegistry) -> Self {
        Runtime {
            kernels,
            memory: Memory::default(),
        }
    }

    pub fn with_memory(kernels: KernelRegistry, memory: Memory) -> Self {
        Runtime { kernels, memory }
    }

    pub fn kernels(&self) -> &KernelRegistry {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut KernelRegistry {
        &mut self.kernels
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut Memory {
        &mut self.memory
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    /// Outputs of every sink leaf (no outgoing hard edge), by port name.
    pub outputs: BTreeMap<EntityId, BTreeMap<String, Value>>,
    /// Final contents of every stream.
    pub streams: StreamData,
    pub trace: ExecutionTrace,
    pub accesses: Vec<AccessEvent>,
    pub recolors: Vec<RecolorEvent>,
    /// `(sequence number, active workers)` at the start and at every resize.
    pub worker_timeline: Vec<(u64, usize)>,
    /// Hard-edge violations found in the trace. Empty on every successful run.
    pub violations: Vec<Violation>,
    pub lifecycle_errors: Vec<String>,
    pub races: RaceReport,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.lifecycle_errors.is_empty()
    }
}

/// State captured when a run stops on a failing kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureSnapshot {
    pub trace: ExecutionTrace,
    pub accesses: Vec<AccessEvent>,
    pub dump_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error("entity `{entity}` input `{port}` expects {expected} but {found}")]
    InputShapeMismatch {
        entity: EntityId,
        port: String,
        expected: DataType,
        found: String,
    },
    #[error("entity `{entity}` is partitioned but output `{port}` of type {datatype} cannot be reassembled")]
    UnpartitionableOutput {
        entity: EntityId,
        port: String,
        datatype: DataType,
    },
    #[error("kernel failed in task {task}: {message}")]
    KernelPanic {
        task: TaskId,
        message: String,
        failure: Box<FailureSnapshot>,
    },
}

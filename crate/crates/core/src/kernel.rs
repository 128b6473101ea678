//! Kernel functions and the registry that binds kernel names to native code.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::entity::{EntityError, KernelRef, COMPOSITE_KERNEL};
use crate::memguard::{Accessor, CellId, MemError, Memory};
use crate::scheduler::task::{Partition, TaskId};
use crate::scheduler::trace::EventLog;
use crate::value::{Cardinality, Value};
use crate::entity::PortSpec;

/// Error raised by a kernel body. The scheduler turns it into a task failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct KernelError {
    pub message: String,
}

impl KernelError {
    pub fn new(message: impl Into<String>) -> Self {
        KernelError {
            message: message.into(),
        }
    }
}

impl From<MemError> for KernelError {
    fn from(e: MemError) -> Self {
        KernelError::new(e.to_string())
    }
}

pub type KernelResult = Result<Vec<Value>, KernelError>;

/// A deterministic function of its inputs and of the guarded cells it
/// touches through the context.
pub trait Kernel: Send + Sync {
    fn run(&self, ctx: &mut KernelContext<'_>) -> KernelResult;
}

impl<F> Kernel for F
where
    F: Fn(&mut KernelContext<'_>) -> KernelResult + Send + Sync,
{
    fn run(&self, ctx: &mut KernelContext<'_>) -> KernelResult {
        self(ctx)
    }
}

#[derive(Clone)]
pub struct RegisteredKernel {
    pub reference: KernelRef,
    pub kernel: Arc<dyn Kernel>,
}

impl fmt::Debug for RegisteredKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredKernel")
            .field("reference", &self.reference)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, RegisteredKernel>,
}

impl KernelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: Arc<dyn Kernel>,
    ) -> Result<KernelRef, EntityError> {
        if name.is_empty() || name == COMPOSITE_KERNEL {
            return Err(EntityError::UnknownKernel(name.to_owned()));
        }
        if self.kernels.contains_key(name) {
            return Err(EntityError::DuplicateId(name.into()));
        }
        let reference = KernelRef::new(name, inputs, outputs);
        self.kernels.insert(
            name.to_owned(),
            RegisteredKernel {
                reference: reference.clone(),
                kernel,
            },
        );
        Ok(reference)
    }

    pub fn register_fn<F>(
        &mut self,
        name: &str,
        inputs: usize,
        outputs: usize,
        f: F,
    ) -> Result<KernelRef, EntityError>
    where
        F: Fn(&mut KernelContext<'_>) -> KernelResult + Send + Sync + 'static,
    {
        self.register(name, inputs, outputs, Arc::new(f))
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredKernel> {
        self.kernels.get(name)
    }

    pub fn kernel_ref(&self, name: &str) -> Option<KernelRef> {
        self.get(name).map(|k| k.reference.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kernels.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kernels.keys().map(String::as_str)
    }

    /// Adds every kernel of `other` that is not already present.
    pub fn extend_from(&mut self, other: &KernelRegistry) {
        for (name, k) in &other.kernels {
            self.kernels.entry(name.clone()).or_insert_with(|| k.clone());
        }
    }
}

/// What a kernel sees while it runs: its inputs, its partition, and guarded
/// access to shared cells.
pub struct KernelContext<'a> {
    pub(crate) task: &'a TaskId,
    pub(crate) worker: usize,
    pub(crate) partition: Partition,
    pub(crate) ports: &'a [PortSpec],
    pub(crate) inputs: &'a [Value],
    pub(crate) memory: &'a Memory,
    pub(crate) log: &'a EventLog,
}

impl<'a> KernelContext<'a> {
    pub fn task(&self) -> &TaskId {
        self.task
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// The full value bound to input port `i`.
    pub fn input(&self, i: usize) -> &Value {
        &self.inputs[i]
    }

    pub fn inputs(&self) -> &[Value] {
        self.inputs
    }

    /// Input `i` restricted to this task's partition when the port is a
    /// stream; fixed ports are returned whole.
    pub fn block(&self, i: usize) -> Value {
        match self.ports.get(i).map(|p| p.cardinality) {
            Some(Cardinality::Stream) if self.inputs[i].datatype().is_sequence() => {
                self.inputs[i].slice(self.partition.range.clone())
            }
            _ => self.inputs[i].clone(),
        }
    }

    fn accessor(&self) -> Accessor<'_> {
        Accessor {
            task: self.task,
            worker: self.worker,
            log: self.log,
        }
    }

    pub fn read(&self, cell: &str) -> Result<Value, KernelError> {
        Ok(self.memory.cell_read(&CellId::from(cell), &self.accessor())?)
    }

    pub fn write(&self, cell: &str, value: Value) -> Result<(), KernelError> {
        Ok(self
            .memory
            .cell_write(&CellId::from(cell), &self.accessor(), value)?)
    }
}

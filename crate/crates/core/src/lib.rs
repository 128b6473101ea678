//! Stream-entity runtime.
//!
//! Programs are trees of [`StreamEntity`] values: leaves run a native kernel,
//! composites group children. [`build_graph`] turns a tree into a
//! [`Hypergraph`] of control-flow edges (declared before/after relations,
//! hard or soft) and data-flow edges (streams shared by name). The
//! [`scheduler`] runs the flattened graph on a work-stealing pool that never
//! starts an entity before its hard predecessors finish, prefers tasks whose
//! soft predecessors are done, and records every lifecycle step and guarded
//! memory access in one totally ordered trace.
//!
//! ```
//! use genesc_core::prelude::*;
//!
//! let mut kernels = KernelRegistry::new();
//! kernels.register_fn("double", 1, 1, |ctx| {
//!     let xs = ctx.block(0);
//!     Ok(vec![Value::Scalars(xs.as_scalars().unwrap().iter().map(|x| 2.0 * x).collect())])
//! }).unwrap();
//! let mut b = EntityBuilder::new(&kernels);
//! let e = b.make_entity(
//!     "double",
//!     "double",
//!     vec![PortSpec::stream("xs", DataType::Scalars)],
//!     vec![PortSpec::fixed("ys", DataType::Scalars)],
//!     vec![],
//! ).unwrap().with_partitioning(Partitioning::Fixed(2));
//! let g = build_graph(&e).unwrap();
//! let inputs = StreamData::from([("xs".into(), Value::Scalars(vec![1.0, 2.0, 3.0]))]);
//! let report = run_parallel(&g, &Runtime::new(kernels), &inputs, &SchedulerConfig::fixed(2, 7)).unwrap();
//! assert_eq!(report.streams["ys"], Value::Scalars(vec![2.0, 4.0, 6.0]));
//! ```

pub mod algebra;
mod bits;
pub mod builtin;
pub mod demos;
pub mod diagnostics;
pub mod entity;
pub mod graph;
pub mod kernel;
pub mod manifest;
pub mod memguard;
pub mod scalar;
pub mod scheduler;
pub mod value;

pub use algebra::{add_parallel, compose, concat, Wire};
pub use entity::{
    Direction, EntityBuilder, EntityError, EntityId, KernelRef, Partitioning, PortSpec,
    RelationConstraint, StreamEntity, Strength,
};
pub use graph::{build_forest, build_graph, flatten, GraphError, Hypergraph};
pub use kernel::{Kernel, KernelContext, KernelError, KernelRegistry, KernelResult};
pub use scalar::Scalar;
pub use scheduler::{
    run, run_parallel, run_sequential, RunReport, Runtime, SchedulerConfig, SchedulerError,
    StreamData,
};
pub use value::{Cardinality, DataType, Value};

pub use demos::nbody::{BodySet, BodySet32, BodySet64};

/// Single-precision body set scalar.
pub type Real32 = f32;
/// Double-precision body set scalar; what the runtime's values carry.
pub type Real64 = f64;

pub mod prelude {
    pub use crate::algebra::{add_parallel, compose, concat, Wire};
    pub use crate::entity::{
        EntityBuilder, EntityId, Partitioning, PortSpec, RelationConstraint, StreamEntity,
        Strength,
    };
    pub use crate::graph::{build_forest, build_graph, flatten, Hypergraph};
    pub use crate::kernel::{KernelContext, KernelError, KernelRegistry, KernelResult};
    pub use crate::memguard::{CellPolicy, GuardConfig, Memory};
    pub use crate::scheduler::{
        run, run_parallel, run_sequential, Mode, RunReport, Runtime, SchedulerConfig, StreamData,
    };
    pub use crate::value::{DataType, Value};
}

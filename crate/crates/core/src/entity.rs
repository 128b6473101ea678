//! Stream entities: a kernel, its typed input/output ports, and ordering
//! relations to other entities.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelRegistry;
use crate::value::{Cardinality, DataType};

/// Entity identifier, unique within a graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_owned())
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        EntityId(s)
    }
}

impl std::borrow::Borrow<str> for EntityId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Name of the placeholder kernel carried by composite entities.
pub const COMPOSITE_KERNEL: &str = "@composite";

/// Reference to a registered kernel by name, with its port arity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelRef {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl KernelRef {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        KernelRef {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    pub fn composite(inputs: usize, outputs: usize) -> Self {
        KernelRef::new(COMPOSITE_KERNEL, inputs, outputs)
    }

    pub fn is_composite(&self) -> bool {
        self.name == COMPOSITE_KERNEL
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub datatype: DataType,
    pub cardinality: Cardinality,
}

impl PortSpec {
    pub fn fixed(name: impl Into<String>, datatype: DataType) -> Self {
        PortSpec {
            name: name.into(),
            datatype,
            cardinality: Cardinality::Fixed,
        }
    }

    pub fn stream(name: impl Into<String>, datatype: DataType) -> Self {
        PortSpec {
            name: name.into(),
            datatype,
            cardinality: Cardinality::Stream,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The owning entity finishes before the target begins.
    Before,
    /// The owning entity begins after the target finishes.
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Hard,
    Soft,
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strength::Hard => "hard",
            Strength::Soft => "soft",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationConstraint {
    pub target: EntityId,
    pub direction: Direction,
    pub strength: Strength,
}

impl RelationConstraint {
    pub fn before(target: impl Into<EntityId>, strength: Strength) -> Self {
        RelationConstraint {
            target: target.into(),
            direction: Direction::Before,
            strength,
        }
    }

    pub fn after(target: impl Into<EntityId>, strength: Strength) -> Self {
        RelationConstraint {
            target: target.into(),
            direction: Direction::After,
            strength,
        }
    }
}

/// How many data-parallel instances an entity expands into at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partitioning {
    #[default]
    Single,
    /// One instance per configured maximum worker.
    Auto,
    Fixed(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntity {
    pub id: EntityId,
    pub kernel: KernelRef,
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    pub relations: Vec<RelationConstraint>,
    #[serde(default)]
    pub partitioning: Partitioning,
    #[serde(default)]
    pub children: Vec<StreamEntity>,
}

impl StreamEntity {
    pub fn is_composite(&self) -> bool {
        self.kernel.is_composite()
    }

    /// This entity followed by all descendants, depth first.
    pub fn walk(&self) -> Vec<&StreamEntity> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e);
            stack.extend(e.children.iter().rev());
        }
        out
    }

    pub fn ids(&self) -> BTreeSet<EntityId> {
        self.walk().into_iter().map(|e| e.id.clone()).collect()
    }

    /// Leaf descendants (the entity itself when it is a leaf).
    pub fn leaves(&self) -> Vec<&StreamEntity> {
        self.walk()
            .into_iter()
            .filter(|e| !e.is_composite())
            .collect()
    }

    pub(crate) fn find_mut(&mut self, id: &EntityId) -> Option<&mut StreamEntity> {
        if &self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    pub fn with_partitioning(mut self, partitioning: Partitioning) -> Self {
        self.partitioning = partitioning;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityError {
    #[error("entity id `{0}` is already registered")]
    DuplicateId(EntityId),
    #[error("kernel `{kernel}` expects {expected:?} (in, out) ports but entity `{entity}` declares {declared:?}")]
    ArityMismatch {
        entity: EntityId,
        kernel: String,
        expected: (usize, usize),
        declared: (usize, usize),
    },
    #[error("kernel `{0}` is not registered")]
    UnknownKernel(String),
    #[error("entity `{0}` declares a relation to itself")]
    SelfRelation(EntityId),
    #[error("entity `{entity}` declares port `{port}` more than once")]
    DuplicatePort { entity: EntityId, port: String },
    #[error("entity id must be non-empty")]
    EmptyId,
    #[error("entity id sets overlap on {0:?}")]
    IdCollision(Vec<EntityId>),
    #[error("port types do not match: {0}")]
    PortTypeMismatch(String),
    #[error("wire refers to missing entity or port: {0}")]
    DanglingWire(String),
}

/// Builds validated leaf entities against a kernel registry and keeps the
/// set of ids handed out so far.
pub struct EntityBuilder<'r> {
    registry: &'r KernelRegistry,
    ids: BTreeSet<EntityId>,
}

impl<'r> EntityBuilder<'r> {
    pub fn new(registry: &'r KernelRegistry) -> Self {
        EntityBuilder {
            registry,
            ids: BTreeSet::new(),
        }
    }

    pub fn registry(&self) -> &KernelRegistry {
        self.registry
    }

    /// Creates a leaf entity and registers its id.
    pub fn make_entity(
        &mut self,
        id: impl Into<EntityId>,
        kernel: &str,
        inputs: Vec<PortSpec>,
        outputs: Vec<PortSpec>,
        relations: Vec<RelationConstraint>,
    ) -> Result<StreamEntity, EntityError> {
        let id = id.into();
        let kernel = self
            .registry
            .kernel_ref(kernel)
            .ok_or_else(|| EntityError::UnknownKernel(kernel.to_owned()))?;
        let entity = StreamEntity {
            id,
            kernel,
            inputs,
            outputs,
            relations,
            partitioning: Partitioning::Single,
            children: Vec::new(),
        };
        validate_leaf(&entity)?;
        if !self.ids.insert(entity.id.clone()) {
            return Err(EntityError::DuplicateId(entity.id));
        }
        Ok(entity)
    }
}

/// Checks the per-entity invariants shared by every construction path.
pub(crate) fn validate_leaf(e: &StreamEntity) -> Result<(), EntityError> {
    if e.id.as_str().is_empty() {
        return Err(EntityError::EmptyId);
    }
    let declared = (e.inputs.len(), e.outputs.len());
    let expected = (e.kernel.inputs, e.kernel.outputs);
    if !e.is_composite() && declared != expected {
        return Err(EntityError::ArityMismatch {
            entity: e.id.clone(),
            kernel: e.kernel.name.clone(),
            expected,
            declared,
        });
    }
    if e.relations.iter().any(|r| r.target == e.id) {
        return Err(EntityError::SelfRelation(e.id.clone()));
    }
    for ports in [&e.inputs, &e.outputs] {
        let mut seen = BTreeSet::new();
        for p in ports {
            if !seen.insert(p.name.as_str()) {
                return Err(EntityError::DuplicatePort {
                    entity: e.id.clone(),
                    port: p.name.clone(),
                });
            }
        }
    }
    Ok(())
}

//! Addition, concatenation and composition of stream entities.
//!
//! Every operation takes entities by value and returns a new composite, so the
//! results feed straight back into any other operation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::entity::{
    Direction, EntityError, EntityId, KernelRef, Partitioning, PortSpec, RelationConstraint,
    StreamEntity, Strength,
};

/// Binds a port of a direct child to a port of the composite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wire {
    pub parent_port: String,
    pub child: EntityId,
    pub child_port: String,
}

impl Wire {
    pub fn new(
        parent_port: impl Into<String>,
        child: impl Into<EntityId>,
        child_port: impl Into<String>,
    ) -> Self {
        Wire {
            parent_port: parent_port.into(),
            child: child.into(),
            child_port: child_port.into(),
        }
    }
}

fn disjoint(parts: &[&StreamEntity], extra: Option<&EntityId>) -> Result<(), EntityError> {
    let mut seen: BTreeSet<EntityId> = BTreeSet::new();
    let mut clash: BTreeSet<EntityId> = BTreeSet::new();
    for part in parts {
        for id in part.ids() {
            if !seen.insert(id.clone()) {
                clash.insert(id);
            }
        }
    }
    if let Some(id) = extra {
        if seen.contains(id) {
            clash.insert(id.clone());
        }
    }
    if clash.is_empty() {
        Ok(())
    } else {
        Err(EntityError::IdCollision(clash.into_iter().collect()))
    }
}

fn merged_ports<'a>(lists: impl IntoIterator<Item = &'a [PortSpec]>) -> Vec<PortSpec> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for list in lists {
        for p in list {
            if seen.insert(p.name.clone()) {
                out.push(p.clone());
            }
        }
    }
    out
}

fn composite(
    id: EntityId,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    children: Vec<StreamEntity>,
) -> StreamEntity {
    StreamEntity {
        id,
        kernel: KernelRef::composite(inputs.len(), outputs.len()),
        inputs,
        outputs,
        relations: Vec::new(),
        partitioning: Partitioning::Single,
        children,
    }
}

/// Leaf-level hard precedence pairs implied by relations whose owner and
/// target both lie inside `root`. A relation on a composite applies to all
/// of its leaves.
pub(crate) fn internal_hard_pairs(root: &StreamEntity) -> BTreeSet<(EntityId, EntityId)> {
    let nodes: BTreeMap<&EntityId, &StreamEntity> =
        root.walk().into_iter().map(|e| (&e.id, e)).collect();
    let leaves_of = |e: &StreamEntity| -> Vec<EntityId> {
        e.leaves().into_iter().map(|l| l.id.clone()).collect()
    };
    let mut pairs = BTreeSet::new();
    for owner in nodes.values() {
        for r in owner.relations.iter().filter(|r| r.strength == Strength::Hard) {
            let Some(target) = nodes.get(&r.target) else {
                continue;
            };
            let (from, to) = match r.direction {
                Direction::Before => (owner, target),
                Direction::After => (target, owner),
            };
            for a in leaves_of(from) {
                for b in leaves_of(to) {
                    pairs.insert((a.clone(), b));
                }
            }
        }
    }
    pairs
}

/// Leaves with no hard successor inside `e`.
pub fn sinks(e: &StreamEntity) -> Vec<EntityId> {
    let pairs = internal_hard_pairs(e);
    e.leaves()
        .into_iter()
        .map(|l| l.id.clone())
        .filter(|id| !pairs.iter().any(|(a, b)| a == id && b != id))
        .collect()
}

/// Leaves with no hard predecessor inside `e`.
pub fn sources(e: &StreamEntity) -> Vec<EntityId> {
    let pairs = internal_hard_pairs(e);
    e.leaves()
        .into_iter()
        .map(|l| l.id.clone())
        .filter(|id| !pairs.iter().any(|(a, b)| b == id && a != id))
        .collect()
}

/// Parallel addition: both operands become children of a new composite with
/// no relation between them.
pub fn add_parallel(a: StreamEntity, b: StreamEntity) -> Result<StreamEntity, EntityError> {
    let id = EntityId::new(format!("({}|{})", a.id, b.id));
    disjoint(&[&a, &b], Some(&id))?;
    let inputs = merged_ports([a.inputs.as_slice(), b.inputs.as_slice()]);
    let outputs = merged_ports([a.outputs.as_slice(), b.outputs.as_slice()]);
    Ok(composite(id, inputs, outputs, vec![a, b]))
}

/// Sequential concatenation: every sink leaf of `first` gets a hard `Before`
/// relation to every source leaf of `second`. Existing relations are kept.
///
/// Output ports of `first` must match the input ports of `second` by
/// datatype, position by position over the common prefix.
pub fn concat(first: StreamEntity, second: StreamEntity) -> Result<StreamEntity, EntityError> {
    let id = EntityId::new(format!("({};{})", first.id, second.id));
    disjoint(&[&first, &second], Some(&id))?;
    for (i, (out, inp)) in first.outputs.iter().zip(&second.inputs).enumerate() {
        if out.datatype != inp.datatype {
            return Err(EntityError::PortTypeMismatch(format!(
                "position {i}: `{}` output `{}` is {} but `{}` input `{}` is {}",
                first.id, out.name, out.datatype, second.id, inp.name, inp.datatype
            )));
        }
    }
    let from = sinks(&first);
    let to = sources(&second);
    let mut first = first;
    for sink in &from {
        let leaf = first
            .find_mut(sink)
            .expect("sink ids come from the same subtree");
        for src in &to {
            leaf.relations
                .push(RelationConstraint::before(src.clone(), Strength::Hard));
        }
    }
    let inputs = first.inputs.clone();
    let outputs = second.outputs.clone();
    Ok(composite(id, inputs, outputs, vec![first, second]))
}

/// Hierarchical composition under an explicit parent id. The composite's
/// ports are exactly the parent ports named by `wiring`.
pub fn compose(
    parent_id: impl Into<EntityId>,
    children: Vec<StreamEntity>,
    wiring: &[Wire],
) -> Result<StreamEntity, EntityError> {
    let parent_id = parent_id.into();
    if parent_id.as_str().is_empty() {
        return Err(EntityError::EmptyId);
    }
    let refs: Vec<&StreamEntity> = children.iter().collect();
    disjoint(&refs, Some(&parent_id))?;

    let mut inputs: Vec<PortSpec> = Vec::new();
    let mut outputs: Vec<PortSpec> = Vec::new();
    for w in wiring {
        let child = children
            .iter()
            .find(|c| c.id == w.child)
            .ok_or_else(|| EntityError::DanglingWire(format!("no child `{}`", w.child)))?;
        let (port, side) = if let Some(p) = child.inputs.iter().find(|p| p.name == w.child_port) {
            (p, &mut inputs)
        } else if let Some(p) = child.outputs.iter().find(|p| p.name == w.child_port) {
            (p, &mut outputs)
        } else {
            return Err(EntityError::DanglingWire(format!(
                "child `{}` has no port `{}`",
                w.child, w.child_port
            )));
        };
        match side.iter().find(|p| p.name == w.parent_port) {
            Some(existing) if existing.datatype != port.datatype => {
                return Err(EntityError::PortTypeMismatch(format!(
                    "parent port `{}` is {} but `{}.{}` is {}",
                    w.parent_port, existing.datatype, w.child, w.child_port, port.datatype
                )));
            }
            Some(_) => {}
            None => side.push(PortSpec {
                name: w.parent_port.clone(),
                datatype: port.datatype,
                cardinality: port.cardinality,
            }),
        }
    }
    Ok(composite(parent_id, inputs, outputs, children))
}

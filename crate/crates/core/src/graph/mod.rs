//! The hypergraph of inter-entity relations: vertices are stream entities,
//! edges are control-flow (relation) or data-flow (shared stream) sets.

mod analysis;

pub(crate) use analysis::{flat_view, Dense};

pub use analysis::{
    analyze, soft_priority_pairs, topological_order, validate_hard_acyclic, AnalysisReport,
    SoftPairs, ValidationReport, EXACT_WIDTH_LIMIT,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{Direction, EntityId, RelationConstraint, StreamEntity, Strength};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Dataflow,
    Controlflow,
}

/// Where an edge came from. Relation edges are in bijection with the
/// relation constraints of the graph's vertices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    Relation { owner: EntityId, index: u32 },
    Stream { name: String },
}

/// An oriented hyperedge: every member of `head` precedes every member of
/// `tail` (for hard edges), or should precede it (soft edges).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HyperEdge {
    pub kind: EdgeKind,
    pub origin: EdgeOrigin,
    pub strength: Strength,
    pub head: Vec<EntityId>,
    pub tail: Vec<EntityId>,
}

impl HyperEdge {
    pub fn members(&self) -> BTreeSet<&EntityId> {
        self.head.iter().chain(&self.tail).collect()
    }

    /// Pairwise precedence induced by this edge, without self pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&EntityId, &EntityId)> {
        self.head
            .iter()
            .flat_map(move |a| self.tail.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("entity `{owner}` relates to unknown entity `{target}`")]
    UnresolvedRelationTarget { owner: EntityId, target: EntityId },
    #[error("entity id `{0}` appears more than once")]
    DuplicateVertex(EntityId),
    #[error("hard constraints contain cycles: {0:?}")]
    CyclicHardConstraints(Vec<Vec<EntityId>>),
    #[error("edge member `{0}` is not a vertex")]
    UnknownMember(EntityId),
    #[error("hierarchy refers to unknown entity `{0}`")]
    UnknownHierarchyMember(EntityId),
}

/// A program's concurrency structure.
///
/// Vertices are stored without their children; the parent-child structure of
/// composites lives in `hierarchy` until [`flatten`] removes it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Hypergraph {
    vertices: BTreeMap<EntityId, StreamEntity>,
    edges: Vec<HyperEdge>,
    hierarchy: BTreeMap<EntityId, Vec<EntityId>>,
}

impl Hypergraph {
    /// Assembles a graph from already-decoded parts, checking that every
    /// referenced id is a vertex. Edge order is canonicalized.
    pub fn from_parts(
        vertices: BTreeMap<EntityId, StreamEntity>,
        mut edges: Vec<HyperEdge>,
        hierarchy: BTreeMap<EntityId, Vec<EntityId>>,
    ) -> Result<Self, GraphError> {
        for e in &edges {
            if let Some(m) = e.members().into_iter().find(|m| !vertices.contains_key(*m)) {
                return Err(GraphError::UnknownMember(m.clone()));
            }
        }
        for (parent, children) in &hierarchy {
            if let Some(m) = std::iter::once(parent)
                .chain(children)
                .find(|m| !vertices.contains_key(*m))
            {
                return Err(GraphError::UnknownHierarchyMember(m.clone()));
            }
        }
        edges.sort();
        Ok(Hypergraph {
            vertices,
            edges,
            hierarchy,
        })
    }

    pub fn vertices(&self) -> &BTreeMap<EntityId, StreamEntity> {
        &self.vertices
    }

    pub fn vertex(&self, id: &EntityId) -> Option<&StreamEntity> {
        self.vertices.get(id)
    }

    pub fn edges(&self) -> &[HyperEdge] {
        &self.edges
    }

    pub fn hierarchy(&self) -> &BTreeMap<EntityId, Vec<EntityId>> {
        &self.hierarchy
    }

    /// Splits the graph back into vertices, edges and hierarchy.
    pub fn into_parts(
        self,
    ) -> (
        BTreeMap<EntityId, StreamEntity>,
        Vec<HyperEdge>,
        BTreeMap<EntityId, Vec<EntityId>>,
    ) {
        (self.vertices, self.edges, self.hierarchy)
    }

    pub fn is_flat(&self) -> bool {
        self.hierarchy.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = &EntityId> {
        self.vertices
            .values()
            .filter(|v| !v.is_composite())
            .map(|v| &v.id)
    }

    pub fn controlflow_edges(&self) -> impl Iterator<Item = &HyperEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Controlflow)
    }

    pub fn dataflow_edges(&self) -> impl Iterator<Item = &HyperEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Dataflow)
    }

    /// Distinct pairwise hard precedence (control-flow and data-flow).
    pub fn hard_pairs(&self) -> BTreeSet<(EntityId, EntityId)> {
        self.pairs_of(Strength::Hard)
    }

    pub fn soft_pairs(&self) -> BTreeSet<(EntityId, EntityId)> {
        self.pairs_of(Strength::Soft)
    }

    fn pairs_of(&self, strength: Strength) -> BTreeSet<(EntityId, EntityId)> {
        self.edges
            .iter()
            .filter(|e| e.strength == strength)
            .flat_map(|e| e.pairs().map(|(a, b)| (a.clone(), b.clone())))
            .collect()
    }

    /// Leaf descendants of `id` following the hierarchy.
    pub fn leaves_of(&self, id: &EntityId) -> Vec<EntityId> {
        let mut out = Vec::new();
        let mut stack = vec![id.clone()];
        while let Some(cur) = stack.pop() {
            match self.hierarchy.get(&cur) {
                Some(children) => stack.extend(children.iter().rev().cloned()),
                None => {
                    if self.vertices.get(&cur).is_some_and(|v| !v.is_composite()) {
                        out.push(cur);
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Streams written by more than one leaf.
    pub fn multi_producer_streams(&self) -> Vec<String> {
        self.dataflow_edges()
            .filter(|e| e.head.len() > 1)
            .filter_map(|e| match &e.origin {
                EdgeOrigin::Stream { name } => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Leaf entities that no hard edge leaves.
    pub fn sinks(&self) -> Vec<EntityId> {
        let pairs = self.hard_pairs();
        let with_succ: BTreeSet<&EntityId> = pairs.iter().map(|(a, _)| a).collect();
        self.leaf_ids()
            .filter(|id| !with_succ.contains(id))
            .cloned()
            .collect()
    }
}

/// Builds the graph for one root entity and its whole hierarchy.
pub fn build_graph(root: &StreamEntity) -> Result<Hypergraph, GraphError> {
    build_forest(std::slice::from_ref(root))
}

/// Builds one graph from several independent roots.
pub fn build_forest(roots: &[StreamEntity]) -> Result<Hypergraph, GraphError> {
    let mut vertices = BTreeMap::new();
    let mut hierarchy = BTreeMap::new();
    for root in roots {
        for e in root.walk() {
            let mut v = e.clone();
            v.children.clear();
            if e.is_composite() {
                hierarchy.insert(
                    e.id.clone(),
                    e.children.iter().map(|c| c.id.clone()).collect(),
                );
            }
            if vertices.insert(e.id.clone(), v).is_some() {
                return Err(GraphError::DuplicateVertex(e.id.clone()));
            }
        }
    }
    for v in vertices.values() {
        if let Some(r) = v.relations.iter().find(|r| !vertices.contains_key(&r.target)) {
            return Err(GraphError::UnresolvedRelationTarget {
                owner: v.id.clone(),
                target: r.target.clone(),
            });
        }
    }
    let edges = derive_edges(&vertices);
    Hypergraph::from_parts(vertices, edges, hierarchy)
}

/// One control-flow edge per relation constraint (`After` normalized to the
/// opposite orientation) plus one data-flow edge per stream name among leaves.
fn derive_edges(vertices: &BTreeMap<EntityId, StreamEntity>) -> Vec<HyperEdge> {
    let mut edges = Vec::new();
    for v in vertices.values() {
        for (index, r) in v.relations.iter().enumerate() {
            let (head, tail) = match r.direction {
                Direction::Before => (v.id.clone(), r.target.clone()),
                Direction::After => (r.target.clone(), v.id.clone()),
            };
            edges.push(HyperEdge {
                kind: EdgeKind::Controlflow,
                origin: EdgeOrigin::Relation {
                    owner: v.id.clone(),
                    index: index as u32,
                },
                strength: r.strength,
                head: vec![head],
                tail: vec![tail],
            });
        }
    }
    let mut streams: BTreeMap<&str, (BTreeSet<EntityId>, BTreeSet<EntityId>)> = BTreeMap::new();
    for v in vertices.values().filter(|v| !v.is_composite()) {
        for p in &v.outputs {
            streams.entry(&p.name).or_default().0.insert(v.id.clone());
        }
        for p in &v.inputs {
            streams.entry(&p.name).or_default().1.insert(v.id.clone());
        }
    }
    for (name, (producers, consumers)) in streams {
        edges.push(HyperEdge {
            kind: EdgeKind::Dataflow,
            origin: EdgeOrigin::Stream {
                name: name.to_owned(),
            },
            strength: Strength::Hard,
            head: producers.into_iter().collect(),
            tail: consumers.into_iter().collect(),
        });
    }
    edges
}

/// Replaces composites by their leaves.
///
/// A relation that targets a composite is rewritten into one relation per
/// leaf of that composite, and every relation declared on a composite is
/// inherited by each of its leaves. Leaf-to-leaf relations are kept verbatim,
/// so flattening an already flat graph is the identity.
pub fn flatten(g: &Hypergraph) -> Hypergraph {
    if g.is_flat() {
        return g.clone();
    }
    let mut parent_of: BTreeMap<&EntityId, &EntityId> = BTreeMap::new();
    for (p, children) in &g.hierarchy {
        for c in children {
            parent_of.insert(c, p);
        }
    }
    let expand = |owner: &EntityId, r: &RelationConstraint| -> Vec<RelationConstraint> {
        g.leaves_of(&r.target)
            .into_iter()
            .filter(|t| t != owner)
            .map(|t| RelationConstraint {
                target: t,
                direction: r.direction,
                strength: r.strength,
            })
            .collect()
    };
    let mut vertices = BTreeMap::new();
    for v in g.vertices.values().filter(|v| !v.is_composite()) {
        let mut leaf = v.clone();
        leaf.relations = Vec::new();
        for r in &v.relations {
            if g.hierarchy.contains_key(&r.target) {
                leaf.relations.extend(expand(&v.id, r));
            } else {
                leaf.relations.push(r.clone());
            }
        }
        let mut cur = parent_of.get(&v.id).copied();
        while let Some(p) = cur {
            for r in &g.vertices[p].relations {
                leaf.relations.extend(expand(&v.id, r));
            }
            cur = parent_of.get(p).copied();
        }
        vertices.insert(leaf.id.clone(), leaf);
    }
    let edges = derive_edges(&vertices);
    Hypergraph::from_parts(vertices, edges, BTreeMap::new())
        .expect("flattened edges only reference surviving leaves")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{add_parallel, concat};
    use crate::entity::{KernelRef, Partitioning, PortSpec};
    use crate::value::DataType;

    pub(crate) fn leaf(id: &str) -> StreamEntity {
        StreamEntity {
            id: id.into(),
            kernel: KernelRef::new("k", 0, 0),
            inputs: vec![],
            outputs: vec![],
            relations: vec![],
            partitioning: Partitioning::Single,
            children: vec![],
        }
    }

    fn five_stage_chain() -> StreamEntity {
        let names = [
            "space_subdivision",
            "tree_construction",
            "mass_center_calc",
            "approximate_force",
            "position_update",
        ];
        let mut it = names.iter().map(|n| leaf(n));
        let first = it.next().unwrap();
        it.fold(first, |acc, e| concat(acc, e).unwrap())
    }

    #[test]
    fn five_stage_chain_has_four_hard_edges() {
        let g = flatten(&build_graph(&five_stage_chain()).unwrap());
        assert_eq!(g.vertices().len(), 5);
        let cf: Vec<_> = g.controlflow_edges().collect();
        assert_eq!(cf.len(), 4);
        assert!(cf.iter().all(|e| e.strength == Strength::Hard));
    }

    #[test]
    fn single_leaf_graph() {
        let g = build_graph(&leaf("solo")).unwrap();
        assert_eq!(g.vertices().len(), 1);
        assert!(g.edges().is_empty());
        assert!(g.is_flat());
    }

    #[test]
    fn unresolved_target_is_an_error() {
        let mut e = leaf("a");
        e.relations
            .push(RelationConstraint::before("ghost", Strength::Hard));
        assert_eq!(
            build_graph(&e).unwrap_err(),
            GraphError::UnresolvedRelationTarget {
                owner: "a".into(),
                target: "ghost".into()
            }
        );
    }

    #[test]
    fn after_relations_are_normalized() {
        let mut b = leaf("b");
        b.relations.push(RelationConstraint::after("a", Strength::Hard));
        let g = build_graph(&add_parallel(leaf("a"), b).unwrap()).unwrap();
        let e = g.controlflow_edges().next().unwrap();
        assert_eq!(e.head, vec![EntityId::from("a")]);
        assert_eq!(e.tail, vec![EntityId::from("b")]);
    }

    #[test]
    fn dataflow_edges_group_producers_and_consumers() {
        let mut p1 = leaf("p1");
        p1.outputs.push(PortSpec::stream("s", DataType::Scalars));
        let mut p2 = leaf("p2");
        p2.outputs.push(PortSpec::stream("s", DataType::Scalars));
        let mut c = leaf("c");
        c.inputs.push(PortSpec::stream("s", DataType::Scalars));
        let mut lone = leaf("lone");
        lone.inputs.push(PortSpec::fixed("external", DataType::Scalar));
        let g = build_forest(&[p1, p2, c, lone]).unwrap();
        let df: Vec<_> = g.dataflow_edges().collect();
        assert_eq!(df.len(), 2);
        let single = df.iter().find(|e| e.members().len() == 1).unwrap();
        assert!(single.head.is_empty());
        assert_eq!(g.multi_producer_streams(), vec!["s".to_owned()]);
        assert!(g.hard_pairs().contains(&("p2".into(), "c".into())));
    }

    #[test]
    fn flatten_is_identity_on_flat_graphs() {
        let mut a = leaf("a");
        a.relations.push(RelationConstraint::before("b", Strength::Hard));
        a.relations.push(RelationConstraint::before("b", Strength::Hard));
        let g = build_forest(&[a, leaf("b")]).unwrap();
        assert_eq!(flatten(&g), g);
    }

    #[test]
    fn flatten_expands_composite_relations() {
        let mut group = add_parallel(leaf("x"), leaf("y")).unwrap();
        group
            .relations
            .push(RelationConstraint::before("z", Strength::Hard));
        let mut w = leaf("w");
        w.relations
            .push(RelationConstraint::before(group.id.clone(), Strength::Soft));
        let g = build_forest(&[group, leaf("z"), w]).unwrap();
        let f = flatten(&g);
        assert!(f.is_flat());
        assert_eq!(f.vertices().len(), 4);
        let hard = f.hard_pairs();
        assert!(hard.contains(&("x".into(), "z".into())));
        assert!(hard.contains(&("y".into(), "z".into())));
        let soft = f.soft_pairs();
        assert!(soft.contains(&("w".into(), "x".into())));
        assert!(soft.contains(&("w".into(), "y".into())));
        assert_eq!(flatten(&f), f);
    }

    #[test]
    fn relation_edges_biject_with_constraints() {
        let g = flatten(&build_graph(&five_stage_chain()).unwrap());
        let from_edges: BTreeSet<(EntityId, u32)> = g
            .controlflow_edges()
            .map(|e| match &e.origin {
                EdgeOrigin::Relation { owner, index } => (owner.clone(), *index),
                other => panic!("unexpected origin {other:?}"),
            })
            .collect();
        let from_relations: BTreeSet<(EntityId, u32)> = g
            .vertices()
            .values()
            .flat_map(|v| (0..v.relations.len()).map(|i| (v.id.clone(), i as u32)))
            .collect();
        assert_eq!(from_edges, from_relations);
        assert_eq!(g.controlflow_edges().count(), from_relations.len());
    }
}

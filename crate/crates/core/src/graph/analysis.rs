use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flatten, GraphError, Hypergraph};
use crate::bits::{closure, BitSet};
use crate::entity::EntityId;

/// Largest graph for which the antichain width is computed exactly.
pub const EXACT_WIDTH_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// One concrete cycle per strongly connected component of the hard
    /// precedence relation.
    pub cycles: Vec<Vec<EntityId>>,
}

impl ValidationReport {
    pub fn is_schedulable(&self) -> bool {
        self.cycles.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub vertices: usize,
    /// Vertices on the longest hard chain.
    pub critical_path: usize,
    /// Size of a largest set of mutually unordered leaves.
    pub width: usize,
    /// False when `width` comes from the level-decomposition lower bound.
    pub width_exact: bool,
    pub components: usize,
    pub multi_producer_streams: Vec<String>,
}

/// Soft precedence after cycle breaking.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SoftPairs {
    pub kept: BTreeSet<(EntityId, EntityId)>,
    pub dropped: Vec<(EntityId, EntityId)>,
}

/// Leaf-indexed adjacency of a flat graph.
pub(crate) struct Dense {
    pub ids: Vec<EntityId>,
    pub index: HashMap<EntityId, usize>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

impl Dense {
    pub fn new<'a>(
        ids: impl IntoIterator<Item = &'a EntityId>,
        pairs: impl IntoIterator<Item = &'a (EntityId, EntityId)>,
    ) -> Self {
        let ids: Vec<EntityId> = ids.into_iter().cloned().collect();
        let index: HashMap<EntityId, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut succ = vec![Vec::new(); ids.len()];
        let mut pred = vec![Vec::new(); ids.len()];
        for (a, b) in pairs {
            if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
                succ[i].push(j);
                pred[j].push(i);
            }
        }
        Dense {
            ids,
            index,
            succ,
            pred,
        }
    }

    pub fn hard(g: &Hypergraph) -> Self {
        Dense::new(g.leaf_ids(), &g.hard_pairs())
    }

    /// Kahn order with ties broken by index; `None` when cyclic.
    pub fn topo(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.ids.len()).filter(|&v| indeg[v] == 0).collect();
        let mut out = Vec::with_capacity(self.ids.len());
        while let Some(v) = queue.pop_front() {
            out.push(v);
            for &s in &self.succ[v] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        (out.len() == self.ids.len()).then_some(out)
    }

    /// One cycle per non-trivial strongly connected component.
    pub fn cycles(&self) -> Vec<Vec<EntityId>> {
        let mut pg = DiGraph::<usize, ()>::new();
        let nodes: Vec<_> = (0..self.ids.len()).map(|i| pg.add_node(i)).collect();
        for (a, succ) in self.succ.iter().enumerate() {
            for &b in succ {
                pg.add_edge(nodes[a], nodes[b], ());
            }
        }
        let mut cycles: Vec<Vec<EntityId>> = tarjan_scc(&pg)
            .into_iter()
            .filter(|scc| scc.len() > 1)
            .map(|scc| {
                let members: BTreeSet<usize> = scc.iter().map(|n| pg[*n]).collect();
                self.cycle_within(&members)
                    .into_iter()
                    .map(|i| self.ids[i].clone())
                    .collect()
            })
            .collect();
        cycles.sort();
        cycles
    }

    /// Shortest cycle through the smallest-id member of an SCC.
    fn cycle_within(&self, members: &BTreeSet<usize>) -> Vec<usize> {
        let start = *members
            .iter()
            .min_by(|a, b| self.ids[**a].cmp(&self.ids[**b]))
            .expect("non-empty component");
        let mut parent: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &s in &self.succ[v] {
                if !members.contains(&s) {
                    continue;
                }
                if s == start {
                    let mut path = vec![v];
                    let mut cur = v;
                    while cur != start {
                        cur = parent[&cur];
                        path.push(cur);
                    }
                    path.reverse();
                    return path;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(s) {
                    e.insert(v);
                    queue.push_back(s);
                }
            }
        }
        unreachable!("every SCC member lies on a cycle")
    }
}

pub(crate) fn flat_view(g: &Hypergraph) -> Cow<'_, Hypergraph> {
    if g.is_flat() {
        Cow::Borrowed(g)
    } else {
        Cow::Owned(flatten(g))
    }
}

/// Lists the cycles of the hard precedence relation among leaves. An empty
/// report means the graph can be scheduled.
pub fn validate_hard_acyclic(g: &Hypergraph) -> ValidationReport {
    let g = flat_view(g);
    ValidationReport {
        cycles: Dense::hard(&g).cycles(),
    }
}

/// Soft precedence with cycles broken by repeatedly dropping the
/// lexicographically smallest pair on a remaining cycle.
pub fn soft_priority_pairs(g: &Hypergraph) -> SoftPairs {
    let g = flat_view(g);
    let mut kept = g.soft_pairs();
    let mut dropped = Vec::new();
    loop {
        let dense = Dense::new(g.leaf_ids(), &kept);
        let Some(cycle) = dense.cycles().into_iter().next() else {
            break;
        };
        let victim = (0..cycle.len())
            .map(|i| (cycle[i].clone(), cycle[(i + 1) % cycle.len()].clone()))
            .min()
            .expect("cycles have at least two members");
        log::warn!(
            "soft constraints form a cycle {:?}; dropping {} -> {}",
            cycle,
            victim.0,
            victim.1
        );
        kept.remove(&victim);
        dropped.push(victim);
    }
    SoftPairs { kept, dropped }
}

/// A linear extension of the hard precedence order over leaves.
///
/// Among ready leaves, those whose soft predecessors have all been emitted
/// come first; ties are broken by a generator seeded with `seed`.
pub fn topological_order(g: &Hypergraph, seed: u64) -> Result<Vec<EntityId>, GraphError> {
    let g = flat_view(g);
    let dense = Dense::hard(&g);
    if dense.topo().is_none() {
        return Err(GraphError::CyclicHardConstraints(dense.cycles()));
    }
    let soft = Dense::new(g.leaf_ids(), &soft_priority_pairs(&g).kept);
    let n = dense.ids.len();
    let mut indeg: Vec<usize> = dense.pred.iter().map(Vec::len).collect();
    let mut soft_left: Vec<usize> = soft.pred.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while !ready.is_empty() {
        let preferred: Vec<usize> = ready.iter().copied().filter(|&v| soft_left[v] == 0).collect();
        let pool = if preferred.is_empty() {
            ready.iter().copied().collect()
        } else {
            preferred
        };
        let v = pool[rng.gen_range(0..pool.len())];
        ready.remove(&v);
        out.push(dense.ids[v].clone());
        for &s in &dense.succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
        for &s in &soft.succ[v] {
            soft_left[s] -= 1;
        }
    }
    Ok(out)
}

/// Critical path, antichain width and component count of the leaf graph.
pub fn analyze(g: &Hypergraph) -> Result<AnalysisReport, GraphError> {
    let g = flat_view(g);
    let dense = Dense::hard(&g);
    let order = dense
        .topo()
        .ok_or_else(|| GraphError::CyclicHardConstraints(dense.cycles()))?;
    let n = dense.ids.len();

    let mut depth = vec![0usize; n];
    for &v in &order {
        depth[v] = 1 + dense.pred[v].iter().map(|&p| depth[p]).max().unwrap_or(0);
    }
    let critical_path = depth.iter().copied().max().unwrap_or(0);

    let (width, width_exact) = if n <= EXACT_WIDTH_LIMIT {
        (dilworth_width(&dense, &order), true)
    } else {
        let mut levels = vec![0usize; critical_path + 1];
        for &d in &depth {
            levels[d] += 1;
        }
        (levels.into_iter().max().unwrap_or(0), false)
    };

    Ok(AnalysisReport {
        vertices: n,
        critical_path,
        width,
        width_exact,
        components: components(&g, &dense),
        multi_producer_streams: g.multi_producer_streams(),
    })
}

/// Maximum antichain = n minus a maximum matching in the comparability
/// bipartite graph (Dilworth/Fulkerson).
fn dilworth_width(dense: &Dense, order: &[usize]) -> usize {
    let n = dense.ids.len();
    let reach = closure(&dense.succ, order);
    let adj: Vec<Vec<usize>> = reach.iter().map(|r| r.iter().collect()).collect();
    let mut match_right: Vec<Option<usize>> = vec![None; n];
    let mut matched = 0;
    for u in 0..n {
        let mut seen = BitSet::new(n);
        if augment(u, &adj, &mut match_right, &mut seen) {
            matched += 1;
        }
    }
    n - matched
}

fn augment(
    u: usize,
    adj: &[Vec<usize>],
    match_right: &mut [Option<usize>],
    seen: &mut BitSet,
) -> bool {
    for &v in &adj[u] {
        if seen.contains(v) {
            continue;
        }
        seen.insert(v);
        let free = match match_right[v] {
            None => true,
            Some(w) => augment(w, adj, match_right, seen),
        };
        if free {
            match_right[v] = Some(u);
            return true;
        }
    }
    false
}

/// Connected components over every edge kind and strength.
fn components(g: &Hypergraph, dense: &Dense) -> usize {
    let n = dense.ids.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in g.edges() {
        let members: Vec<usize> = e
            .members()
            .into_iter()
            .filter_map(|m| dense.index.get(m).copied())
            .collect();
        for w in members.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    (0..n).filter(|&v| find(&mut parent, v) == v).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{RelationConstraint, Strength};
    use crate::graph::build_forest;
    use crate::graph::tests::leaf;

    fn graph(n: &[&str], hard: &[(&str, &str)], soft: &[(&str, &str)]) -> Hypergraph {
        let mut leaves: Vec<_> = n.iter().map(|id| leaf(id)).collect();
        for (rels, strength) in [(hard, Strength::Hard), (soft, Strength::Soft)] {
            for (a, b) in rels {
                let owner = leaves.iter_mut().find(|e| e.id.as_str() == *a).unwrap();
                owner.relations.push(RelationConstraint::before(*b, strength));
            }
        }
        build_forest(&leaves).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<EntityId> {
        v.iter().map(|s| EntityId::from(*s)).collect()
    }

    #[test]
    fn two_cycle_is_reported() {
        let g = graph(&["a", "b"], &[("a", "b"), ("b", "a")], &[]);
        assert_eq!(validate_hard_acyclic(&g).cycles, vec![ids(&["a", "b"])]);
        assert!(matches!(
            topological_order(&g, 0),
            Err(GraphError::CyclicHardConstraints(_))
        ));
        assert!(analyze(&g).is_err());
    }

    #[test]
    fn chain_order_is_unique() {
        let g = graph(&["a", "b", "c"], &[("a", "b"), ("b", "c")], &[]);
        for seed in 0..20 {
            assert_eq!(topological_order(&g, seed).unwrap(), ids(&["a", "b", "c"]));
        }
    }

    #[test]
    fn soft_edges_prefer_but_do_not_block() {
        let g = graph(&["a", "b"], &[], &[("b", "a")]);
        for seed in 0..20 {
            assert_eq!(topological_order(&g, seed).unwrap(), ids(&["b", "a"]));
        }
        let inverted = graph(&["a", "b"], &[("a", "b")], &[("b", "a")]);
        assert_eq!(topological_order(&inverted, 3).unwrap(), ids(&["a", "b"]));
    }

    #[test]
    fn soft_cycle_drops_smallest_pair() {
        let g = graph(&["a", "b", "c"], &[], &[("a", "b"), ("b", "c"), ("c", "a")]);
        let soft = soft_priority_pairs(&g);
        assert_eq!(soft.dropped, vec![("a".into(), "b".into())]);
        assert_eq!(soft.kept.len(), 2);
        assert!(validate_hard_acyclic(&g).is_schedulable());
        assert_eq!(topological_order(&g, 1).unwrap(), ids(&["b", "c", "a"]));
    }

    #[test]
    fn analysis_of_chain_and_isolated() {
        let chain = graph(
            &["a", "b", "c", "d", "e"],
            &[("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")],
            &[],
        );
        let r = analyze(&chain).unwrap();
        assert_eq!((r.critical_path, r.width, r.components), (5, 1, 1));
        assert!(r.width_exact);

        let iso = graph(&["a", "b", "c", "d"], &[], &[]);
        let r = analyze(&iso).unwrap();
        assert_eq!((r.critical_path, r.width, r.components), (1, 4, 4));

        let empty = Hypergraph::default();
        let r = analyze(&empty).unwrap();
        assert_eq!((r.critical_path, r.width, r.components), (0, 0, 0));
    }

    #[test]
    fn diamond_width_two() {
        let g = graph(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
            &[],
        );
        let r = analyze(&g).unwrap();
        assert_eq!((r.critical_path, r.width), (3, 2));
    }

    #[test]
    fn large_graph_width_is_flagged_approximate() {
        let names: Vec<String> = (0..EXACT_WIDTH_LIMIT + 1).map(|i| format!("v{i:04}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let g = graph(&refs, &[], &[]);
        let r = analyze(&g).unwrap();
        assert!(!r.width_exact);
        assert_eq!(r.width, EXACT_WIDTH_LIMIT + 1);
    }
}

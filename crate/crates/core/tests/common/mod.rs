//! Program generators and brute-force oracles shared by the integration
//! tests. Nothing here calls into the analysis code it is used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use genesc_core::entity::{Direction, KernelRef};
use genesc_core::kernel::{KernelContext, KernelError, KernelResult};
use genesc_core::memguard::{AccessEvent, AccessKind, CellPolicy, GuardConfig, Memory};
use genesc_core::scheduler::{ExecutionTrace, TaskId};
use genesc_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const STREAM_LEN: usize = 12;

pub fn leaf(id: &str, kernel: &str, inputs: Vec<PortSpec>, outputs: Vec<PortSpec>) -> StreamEntity {
    StreamEntity {
        id: id.into(),
        kernel: KernelRef::new(kernel, inputs.len(), outputs.len()),
        inputs,
        outputs,
        relations: vec![],
        partitioning: Partitioning::Single,
        children: vec![],
    }
}

fn entity_salt(id: &str) -> f64 {
    id.bytes().map(f64::from).sum::<f64>() / 7.0
}

/// `mix{k}`: element-wise `0.5 * Σ inputs + salt(entity)` over this task's
/// block, so any partitioning reassembles to the same stream.
fn mix(ctx: &mut KernelContext<'_>) -> KernelResult {
    let len = ctx.input(0).element_count();
    let range = if ctx.partition().count == 1 { 0..len } else { ctx.partition().range.clone() };
    let salt = entity_salt(ctx.task().entity.as_str());
    let mut out = vec![0.0; range.len()];
    for v in ctx.inputs() {
        let xs = v
            .as_scalars()
            .ok_or_else(|| KernelError::new("mix takes scalars"))?;
        for (o, x) in out.iter_mut().zip(&xs[range.clone()]) {
            *o += x;
        }
    }
    Ok(vec![Value::Scalars(out.into_iter().map(|s| 0.5 * s + salt).collect())])
}

pub const MAX_FAN_IN: usize = 3;

pub fn mix_registry() -> KernelRegistry {
    let mut r = KernelRegistry::new();
    for k in 1..=MAX_FAN_IN {
        r.register_fn(&format!("mix{k}"), k, 1, mix).unwrap();
    }
    r
}

/// A random race-free program: a DAG of at most `max_n` leaves, each reading
/// up to three earlier streams (or the program input `src`) and writing its
/// own stream, plus random control relations, some soft and some pointing
/// backwards as soft hints.
pub struct Program {
    pub roots: Vec<StreamEntity>,
    pub graph: Hypergraph,
    pub inputs: StreamData,
}

pub fn random_program(r: &mut TestRng, max_n: usize) -> Program {
    let n = r.gen_range(1..=max_n);
    let mut leaves = Vec::with_capacity(n);
    for i in 0..n {
        let mut srcs: Vec<usize> = (0..i).filter(|_| r.gen_bool(0.3)).collect();
        srcs.shuffle(r);
        srcs.truncate(MAX_FAN_IN);
        let mut inputs: Vec<PortSpec> = srcs
            .iter()
            .map(|j| PortSpec::fixed(format!("s{j}"), DataType::Scalars))
            .collect();
        if inputs.is_empty() {
            inputs.push(PortSpec::fixed("src", DataType::Scalars));
        }
        inputs[0].cardinality = Cardinality::Stream;
        let k = inputs.len();
        let mut e = leaf(
            &format!("e{i}"),
            &format!("mix{k}"),
            inputs,
            vec![PortSpec::stream(format!("s{i}"), DataType::Scalars)],
        );
        e.partitioning = match r.gen_range(0..4) {
            0 => Partitioning::Fixed(r.gen_range(2..=4)),
            1 => Partitioning::Auto,
            _ => Partitioning::Single,
        };
        leaves.push(e);
    }
    for i in 0..n {
        for j in i + 1..n {
            if r.gen_bool(0.12) {
                let s = if r.gen_bool(0.5) { Strength::Hard } else { Strength::Soft };
                let rel = if r.gen_bool(0.5) {
                    RelationConstraint::before(format!("e{j}"), s)
                } else {
                    leaves[j].relations.push(RelationConstraint::after(format!("e{i}"), s));
                    continue;
                };
                leaves[i].relations.push(rel);
            } else if r.gen_bool(0.05) {
                leaves[j]
                    .relations
                    .push(RelationConstraint::before(format!("e{i}"), Strength::Soft));
            }
        }
    }
    let graph = build_forest(&leaves).unwrap();
    let inputs = StreamData::from([(
        "src".to_owned(),
        Value::Scalars((0..STREAM_LEN).map(|x| x as f64 * 0.25).collect()),
    )]);
    Program {
        roots: leaves,
        graph,
        inputs,
    }
}

/// Transitive closure of `pairs` by depth-first search from every vertex.
pub fn reach<T: Ord + Clone>(pairs: &BTreeSet<(T, T)>) -> BTreeSet<(T, T)> {
    let mut succ: BTreeMap<&T, Vec<&T>> = BTreeMap::new();
    for (a, b) in pairs {
        succ.entry(a).or_default().push(b);
    }
    let mut out = BTreeSet::new();
    for start in succ.keys() {
        let mut stack: Vec<&T> = succ[start].clone();
        let mut seen: BTreeSet<&T> = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                out.insert(((*start).clone(), v.clone()));
                if let Some(next) = succ.get(v) {
                    stack.extend(next.iter().copied());
                }
            }
        }
    }
    out
}

/// Leaf-level hard precedence straight from the entity trees: relations
/// (with `after` turned around) expanded to every leaf under owner and
/// target, plus producer → consumer pairs of every stream name.
pub fn leaf_hard_pairs(roots: &[StreamEntity]) -> BTreeSet<(String, String)> {
    fn leaves_under(e: &StreamEntity) -> Vec<String> {
        if e.children.is_empty() && !e.is_composite() {
            return vec![e.id.to_string()];
        }
        e.children.iter().flat_map(leaves_under).collect()
    }
    let mut all: Vec<&StreamEntity> = Vec::new();
    let mut stack: Vec<&StreamEntity> = roots.iter().collect();
    while let Some(e) = stack.pop() {
        all.push(e);
        stack.extend(e.children.iter());
    }
    let by_id: HashMap<String, &StreamEntity> = all.iter().map(|e| (e.id.to_string(), *e)).collect();
    let mut pairs = BTreeSet::new();
    for e in &all {
        for r in e.relations.iter().filter(|r| r.strength == Strength::Hard) {
            let target = by_id[r.target.as_str()];
            for a in leaves_under(e) {
                for b in leaves_under(target) {
                    let (x, y) = match r.direction {
                        Direction::Before => (a.clone(), b),
                        Direction::After => (b, a.clone()),
                    };
                    if x != y {
                        pairs.insert((x, y));
                    }
                }
            }
        }
    }
    let leaves: Vec<&&StreamEntity> = all.iter().filter(|e| !e.is_composite()).collect();
    for p in &leaves {
        for c in &leaves {
            if p.id == c.id {
                continue;
            }
            let feeds = p
                .outputs
                .iter()
                .any(|o| c.inputs.iter().any(|i| i.name == o.name));
            if feeds {
                pairs.insert((p.id.to_string(), c.id.to_string()));
            }
        }
    }
    pairs
}

/// A random tree of composites over at most `max_leaves` leaves, with random
/// relations between any two distinct entities and a few shared streams.
pub fn random_hierarchy(r: &mut TestRng, max_leaves: usize) -> Vec<StreamEntity> {
    let n = r.gen_range(1..=max_leaves);
    let mut nodes: Vec<StreamEntity> = (0..n)
        .map(|i| {
            let mut ins = vec![];
            let mut outs = vec![];
            if r.gen_bool(0.3) {
                ins.push(PortSpec::fixed(format!("q{}", r.gen_range(0..4)), DataType::Scalars));
            }
            if r.gen_bool(0.3) {
                outs.push(PortSpec::fixed(format!("q{}", r.gen_range(0..4)), DataType::Scalars));
            }
            if ins.first().map(|p| &p.name) == outs.first().map(|p| &p.name) && !ins.is_empty() {
                outs.clear();
            }
            leaf(&format!("l{i}"), "k", ins, outs)
        })
        .collect();
    let mut next = 0;
    while nodes.len() > 1 && r.gen_bool(0.8) {
        let k = r.gen_range(2..=nodes.len().min(4));
        nodes.shuffle(r);
        let children: Vec<StreamEntity> = nodes.drain(..k).collect();
        nodes.push(StreamEntity {
            id: format!("c{next}").into(),
            kernel: KernelRef::composite(0, 0),
            inputs: vec![],
            outputs: vec![],
            relations: vec![],
            partitioning: Partitioning::Single,
            children,
        });
        next += 1;
    }
    let mut ids: Vec<String> = Vec::new();
    for root in &nodes {
        for e in root.walk() {
            ids.push(e.id.to_string());
        }
    }
    let m = r.gen_range(0..=ids.len() * 2);
    let mut rels: Vec<(String, RelationConstraint)> = Vec::new();
    for _ in 0..m {
        let a = ids.choose(r).unwrap().clone();
        let b = ids.choose(r).unwrap().clone();
        if a == b {
            continue;
        }
        let s = if r.gen_bool(0.7) { Strength::Hard } else { Strength::Soft };
        let rel = if r.gen_bool(0.5) {
            RelationConstraint::before(b, s)
        } else {
            RelationConstraint::after(b, s)
        };
        rels.push((a, rel));
    }
    fn attach(e: &mut StreamEntity, owner: &str, rel: &RelationConstraint) -> bool {
        if e.id.as_str() == owner {
            e.relations.push(rel.clone());
            return true;
        }
        e.children.iter_mut().any(|c| attach(c, owner, rel))
    }
    for (owner, rel) in rels {
        for root in nodes.iter_mut() {
            if attach(root, &owner, &rel) {
                break;
            }
        }
    }
    nodes
}

/// All linear extensions of `pairs` over `ids`, by brute-force permutation.
pub fn linear_extensions(ids: &[String], pairs: &BTreeSet<(String, String)>) -> BTreeSet<Vec<String>> {
    fn go(
        rest: &mut Vec<String>,
        cur: &mut Vec<String>,
        pairs: &BTreeSet<(String, String)>,
        out: &mut BTreeSet<Vec<String>>,
    ) {
        if rest.is_empty() {
            out.insert(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest[i].clone();
            // v may go next only if none of its predecessors is still pending
            if rest.iter().any(|u| pairs.contains(&(u.clone(), v.clone()))) {
                continue;
            }
            rest.remove(i);
            cur.push(v.clone());
            go(rest, cur, pairs, out);
            cur.pop();
            rest.insert(i, v);
        }
    }
    let mut out = BTreeSet::new();
    go(&mut ids.to_vec(), &mut Vec::new(), pairs, &mut out);
    out
}

/// Brute-force race scan: a task-level happens-before graph from the trace
/// (program order per worker, every instance of a hard predecessor before
/// every instance of its successor), reachability by DFS, and every
/// conflicting access pair checked against it. Returns pairs of access
/// sequence numbers, smaller first.
pub fn brute_force_races(
    trace: &ExecutionTrace,
    accesses: &[AccessEvent],
    hard: &BTreeSet<(String, String)>,
) -> BTreeSet<(u64, u64)> {
    let mut starts: Vec<(u64, TaskId, usize)> = Vec::new();
    for e in &trace.events {
        if let (genesc_core::scheduler::EventKind::Start, Some(t)) = (&e.kind, &e.task) {
            starts.push((e.seq, t.clone(), e.worker));
        }
    }
    starts.sort();
    let mut edges: BTreeSet<(TaskId, TaskId)> = BTreeSet::new();
    let mut last: HashMap<usize, TaskId> = HashMap::new();
    for (_, t, w) in &starts {
        if let Some(p) = last.insert(*w, t.clone()) {
            edges.insert((p, t.clone()));
        }
    }
    for (_, a, _) in &starts {
        for (_, b, _) in &starts {
            if hard.contains(&(a.entity.to_string(), b.entity.to_string())) {
                edges.insert((a.clone(), b.clone()));
            }
        }
    }
    let hb = reach(&edges);
    let mut out = BTreeSet::new();
    for (i, x) in accesses.iter().enumerate() {
        for y in &accesses[i + 1..] {
            if x.cell != y.cell || x.task == y.task {
                continue;
            }
            if x.kind == AccessKind::Read && y.kind == AccessKind::Read {
                continue;
            }
            if hb.contains(&(x.task.clone(), y.task.clone())) || hb.contains(&(y.task.clone(), x.task.clone())) {
                continue;
            }
            out.insert((x.seq.min(y.seq), x.seq.max(y.seq)));
        }
    }
    out
}

/// Two tasks that only proceed once both have started, so they are
/// guaranteed to overlap on different workers.
#[derive(Clone)]
pub struct Rendezvous(Arc<(Mutex<usize>, Condvar)>);

impl Rendezvous {
    pub fn new() -> Self {
        Rendezvous(Arc::new((Mutex::new(0), Condvar::new())))
    }

    pub fn arrive(&self, parties: usize) {
        let (m, cv) = &*self.0;
        let mut n = m.lock().unwrap();
        *n += 1;
        cv.notify_all();
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        while *n < parties {
            let now = std::time::Instant::now();
            if now >= deadline {
                break;
            }
            n = cv.wait_timeout(n, deadline - now).unwrap().0;
        }
    }
}

/// A program for the race suites: a random DAG where every leaf writes its
/// own plain cell, and one chosen pair also writes the shared cell `hot`.
/// With `planted`, the pair is unordered and meets at a rendezvous first;
/// otherwise the pair is hard-ordered.
pub struct RaceProgram {
    pub graph: Hypergraph,
    pub runtime: Runtime,
    pub pair: (String, String),
    pub hard: BTreeSet<(String, String)>,
}

pub fn race_program(r: &mut TestRng, planted: bool) -> Option<RaceProgram> {
    let n = r.gen_range(2..=8);
    let mut leaves: Vec<StreamEntity> = (0..n).map(|i| leaf(&format!("t{i}"), "touch", vec![], vec![])).collect();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen_bool(0.25) {
                leaves[i]
                    .relations
                    .push(RelationConstraint::before(format!("t{j}"), Strength::Hard));
            }
        }
    }
    let direct: BTreeSet<(String, String)> = leaves
        .iter()
        .flat_map(|e| e.relations.iter().map(move |rel| (e.id.to_string(), rel.target.to_string())))
        .collect();
    let closure = reach(&direct);
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (format!("t{i}"), format!("t{j}"));
            let ordered = closure.contains(&(a.clone(), b.clone()));
            if ordered != planted {
                candidates.push((a, b));
            }
        }
    }
    let pair = candidates.choose(r)?.clone();
    let graph = build_forest(&leaves).unwrap();

    let mut memory = Memory::new(GuardConfig::default());
    memory.register("hot", CellPolicy::Plain, Value::Scalar(0.0)).unwrap();
    for i in 0..n {
        memory
            .register(format!("own.t{i}"), CellPolicy::Plain, Value::Scalar(0.0))
            .unwrap();
    }
    let meet = Rendezvous::new();
    let hot_pair = pair.clone();
    let mut kernels = KernelRegistry::new();
    kernels
        .register_fn("touch", 0, 0, move |ctx| {
            let me = ctx.task().entity.to_string();
            let own = format!("own.{me}");
            let x = ctx.read(&own)?.as_scalar().unwrap_or(0.0);
            ctx.write(&own, Value::Scalar(x + 1.0))?;
            if me == hot_pair.0 || me == hot_pair.1 {
                if planted {
                    meet.arrive(2);
                }
                ctx.write("hot", Value::Scalar(1.0))?;
            }
            Ok(vec![])
        })
        .unwrap();
    Some(RaceProgram {
        graph,
        runtime: Runtime::with_memory(kernels, memory),
        pair,
        hard: direct,
    })
}

/// The direct O(N²) loop: for each body, the force from every other body in
/// index order, then `v += a dt`, then `x += v_new dt`, double-buffered.
pub fn direct_nbody(
    x: &[[f64; 3]],
    v: &[[f64; 3]],
    m: &[f64],
    dt: f64,
    steps: usize,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    const EPS2: f64 = 1e-9 * 1e-9;
    let n = x.len();
    let mut x = x.to_vec();
    let mut v = v.to_vec();
    for _ in 0..steps {
        let mut xnew = x.clone();
        let mut vnew = v.clone();
        for j in 0..n {
            let mut f = [0.0f64; 3];
            for k in 0..n {
                if k == j {
                    continue;
                }
                let d = [x[k][0] - x[j][0], x[k][1] - x[j][1], x[k][2] - x[j][2]];
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let s = (r2 + EPS2).sqrt();
                let w = m[k] / (s * s * s);
                for c in 0..3 {
                    f[c] += w * d[c];
                }
            }
            for c in 0..3 {
                vnew[j][c] = v[j][c] + f[c] * dt;
                xnew[j][c] = x[j][c] + vnew[j][c] * dt;
            }
        }
        x = xnew;
        v = vnew;
    }
    (x, v)
}

pub fn max_rel_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs() / q[k].abs().max(f64::MIN_POSITIVE)))
        .fold(0.0, f64::max)
}

/// Random trees exercising every field the segment and manifest formats
/// store. Leaf kernels are named `k{inputs}_{outputs}`; see
/// [`arity_registry`].
pub fn random_decorated_forest(r: &mut TestRng) -> Vec<StreamEntity> {
    let mut roots = random_hierarchy(r, 10);
    fn decorate(e: &mut StreamEntity, r: &mut TestRng) {
        if !e.is_composite() {
            for p in e.inputs.iter_mut().chain(e.outputs.iter_mut()) {
                p.datatype = *DataType::ALL.choose(r).unwrap();
                if r.gen_bool(0.5) {
                    p.cardinality = Cardinality::Stream;
                }
            }
            e.partitioning = match r.gen_range(0..3) {
                0 => Partitioning::Single,
                1 => Partitioning::Auto,
                _ => Partitioning::Fixed(r.gen_range(1..9)),
            };
            e.kernel.name = format!("k{}_{}", e.inputs.len(), e.outputs.len());
        }
        for c in e.children.iter_mut() {
            decorate(c, r);
        }
    }
    for root in roots.iter_mut() {
        decorate(root, r);
    }
    roots
}

pub fn arity_registry() -> KernelRegistry {
    let mut reg = KernelRegistry::new();
    for i in 0..=1 {
        for o in 0..=1 {
            reg.register_fn(&format!("k{i}_{o}"), i, o, move |_| Ok(vec![Value::Unit; o]))
                .unwrap();
        }
    }
    reg
}

pub fn random_segment_graph(r: &mut TestRng) -> Hypergraph {
    let g = build_forest(&random_decorated_forest(r)).unwrap();
    if r.gen_bool(0.5) {
        flatten(&g)
    } else {
        g
    }
}

/// `n` independent leaves that each sleep for `cost`.
pub fn sleepers(n: usize, cost: Duration) -> (Hypergraph, Runtime) {
    let mut kernels = KernelRegistry::new();
    kernels
        .register_fn("sleep", 0, 0, move |_| {
            std::thread::sleep(cost);
            Ok(vec![])
        })
        .unwrap();
    let leaves: Vec<StreamEntity> = (0..n).map(|i| leaf(&format!("p{i}"), "sleep", vec![], vec![])).collect();
    (build_forest(&leaves).unwrap(), Runtime::new(kernels))
}

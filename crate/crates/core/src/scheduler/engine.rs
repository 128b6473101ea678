use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{resize_pool, ConfigError, Mode, SchedulerConfig};
use super::task::{partition_map, Partition, TaskId};
use super::trace::{EventKind, EventLog};
use super::{FailureSnapshot, RunReport, Runtime, SchedulerError, StreamData};
use crate::diagnostics::{dump_core, verify_trace};
use crate::entity::{EntityError, Partitioning, StreamEntity};
use crate::graph::{flat_view, soft_priority_pairs, topological_order, Dense, GraphError, Hypergraph};
use crate::kernel::{Kernel, KernelContext};
use crate::memguard::{analyze_races_with, Color, ColorBinding, RaceReport};
use crate::value::{Cardinality, Value};

/// Runs `g` in the mode selected by `cfg`.
pub fn run(
    g: &Hypergraph,
    runtime: &Runtime,
    inputs: &StreamData,
    cfg: &SchedulerConfig,
) -> Result<RunReport, SchedulerError> {
    cfg.validate()?;
    let plan = Plan::new(g, runtime, inputs, cfg)?;
    let exec = Exec::new(&plan, runtime, inputs, cfg);
    match cfg.mode {
        Mode::Parallel => exec.parallel(),
        Mode::Sequential => exec.sequential(cfg.seed)?,
    }
    exec.finish(cfg.mode)
}

/// Work-stealing execution on `cfg.min_workers..=cfg.max_workers` threads.
pub fn run_parallel(
    g: &Hypergraph,
    runtime: &Runtime,
    inputs: &StreamData,
    cfg: &SchedulerConfig,
) -> Result<RunReport, SchedulerError> {
    let cfg = SchedulerConfig {
        mode: Mode::Parallel,
        ..cfg.clone()
    };
    run(g, runtime, inputs, &cfg)
}

/// One task at a time on the calling thread, entities in the seeded
/// topological order and instances in index order.
pub fn run_sequential(
    g: &Hypergraph,
    runtime: &Runtime,
    inputs: &StreamData,
    cfg: &SchedulerConfig,
) -> Result<RunReport, SchedulerError> {
    let cfg = SchedulerConfig {
        mode: Mode::Sequential,
        ..cfg.clone()
    };
    run(g, runtime, inputs, &cfg)
}

/// Everything about a run that is fixed before the first task starts.
struct Plan {
    graph: Hypergraph,
    entities: Vec<StreamEntity>,
    kernels: Vec<Arc<dyn Kernel>>,
    parts: Vec<usize>,
    succ: Vec<Vec<usize>>,
    hard_preds: Vec<usize>,
    soft_succ: Vec<Vec<usize>>,
    soft_preds: Vec<usize>,
    warnings: Vec<String>,
}

impl Plan {
    fn new(
        g: &Hypergraph,
        runtime: &Runtime,
        inputs: &StreamData,
        cfg: &SchedulerConfig,
    ) -> Result<Self, SchedulerError> {
        let graph = flat_view(g).into_owned();
        let hard = Dense::hard(&graph);
        if hard.topo().is_none() {
            return Err(GraphError::CyclicHardConstraints(hard.cycles()).into());
        }
        let soft_pairs = soft_priority_pairs(&graph);
        let soft = Dense::new(graph.leaf_ids(), &soft_pairs.kept);
        let mut warnings: Vec<String> = soft_pairs
            .dropped
            .iter()
            .map(|(a, b)| format!("soft cycle broken by dropping {a} -> {b}"))
            .collect();
        for s in graph.multi_producer_streams() {
            warnings.push(format!("stream `{s}` has more than one producer"));
        }

        let entities: Vec<StreamEntity> = hard
            .ids
            .iter()
            .map(|id| graph.vertices()[id].clone())
            .collect();

        let mut produced = BTreeMap::new();
        for e in &entities {
            for p in &e.outputs {
                produced.insert(p.name.as_str(), p.datatype);
            }
        }
        let mut kernels = Vec::with_capacity(entities.len());
        let mut parts = Vec::with_capacity(entities.len());
        for e in &entities {
            let k = runtime
                .kernels()
                .get(&e.kernel.name)
                .ok_or_else(|| EntityError::UnknownKernel(e.kernel.name.clone()))?;
            let expected = (k.reference.inputs, k.reference.outputs);
            let declared = (e.inputs.len(), e.outputs.len());
            if expected != declared {
                return Err(EntityError::ArityMismatch {
                    entity: e.id.clone(),
                    kernel: e.kernel.name.clone(),
                    expected,
                    declared,
                }
                .into());
            }
            kernels.push(k.kernel.clone());

            for p in &e.inputs {
                let found = match produced.get(p.name.as_str()) {
                    Some(t) => Some(*t),
                    None => inputs.get(&p.name).map(Value::datatype),
                };
                if found != Some(p.datatype) {
                    return Err(SchedulerError::InputShapeMismatch {
                        entity: e.id.clone(),
                        port: p.name.clone(),
                        expected: p.datatype,
                        found: match found {
                            Some(t) => format!("found {t}"),
                            None => "nothing produces or supplies it".into(),
                        },
                    });
                }
            }

            let requested = match e.partitioning {
                Partitioning::Single => 1,
                Partitioning::Auto => cfg.max_workers,
                Partitioning::Fixed(0) => {
                    return Err(ConfigError::Invalid(format!(
                        "entity `{}` asks for zero partitions",
                        e.id
                    ))
                    .into())
                }
                Partitioning::Fixed(n) => n as usize,
            };
            let has_stream = e.inputs.iter().any(|p| p.cardinality == Cardinality::Stream);
            if requested > 1 && !has_stream {
                warnings.push(format!(
                    "entity `{}` has no stream input; running it as one task",
                    e.id
                ));
            }
            if requested > 1 && has_stream {
                if let Some(p) = e
                    .outputs
                    .iter()
                    .find(|p| !p.datatype.is_sequence() && p.datatype != crate::value::DataType::Unit)
                {
                    return Err(SchedulerError::UnpartitionableOutput {
                        entity: e.id.clone(),
                        port: p.name.clone(),
                        datatype: p.datatype,
                    });
                }
            }
            parts.push(if has_stream { requested } else { 1 });
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        Ok(Plan {
            hard_preds: hard.pred.iter().map(Vec::len).collect(),
            succ: hard.succ,
            soft_preds: soft.pred.iter().map(Vec::len).collect(),
            soft_succ: soft.succ,
            graph,
            entities,
            kernels,
            parts,
            warnings,
        })
    }
}

struct Job {
    entity: usize,
    partition: Partition,
}

/// Per-entity bookkeeping between readiness and completion.
#[derive(Default)]
struct Slot {
    inputs: Arc<Vec<Value>>,
    outputs: Vec<Option<Vec<Value>>>,
    left: usize,
}

struct Exec<'a> {
    plan: &'a Plan,
    runtime: &'a Runtime,
    cfg: &'a SchedulerConfig,
    log: EventLog,
    streams: Mutex<StreamData>,
    hard_left: Vec<AtomicUsize>,
    soft_left: Vec<AtomicUsize>,
    slots: Vec<Mutex<Slot>>,
    results: Mutex<BTreeMap<usize, Vec<Value>>>,
    queues: Vec<Mutex<VecDeque<Job>>>,
    queued: AtomicUsize,
    done: AtomicUsize,
    completed: AtomicUsize,
    active: AtomicUsize,
    aborted: AtomicBool,
    failure: Mutex<Option<(TaskId, String)>>,
    wake: (Mutex<()>, Condvar),
    timeline: Mutex<Vec<(u64, usize)>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "kernel panicked".to_owned()
    }
}

impl<'a> Exec<'a> {
    fn new(
        plan: &'a Plan,
        runtime: &'a Runtime,
        inputs: &StreamData,
        cfg: &'a SchedulerConfig,
    ) -> Self {
        let n = plan.entities.len();
        let workers = match cfg.mode {
            Mode::Parallel => cfg.max_workers,
            Mode::Sequential => 1,
        };
        let initial = match cfg.mode {
            Mode::Parallel => cfg.min_workers,
            Mode::Sequential => 1,
        };
        Exec {
            plan,
            runtime,
            cfg,
            log: EventLog::new(),
            streams: Mutex::new(inputs.clone()),
            hard_left: plan.hard_preds.iter().map(|&c| AtomicUsize::new(c)).collect(),
            soft_left: plan.soft_preds.iter().map(|&c| AtomicUsize::new(c)).collect(),
            slots: (0..n).map(|_| Mutex::new(Slot::default())).collect(),
            results: Mutex::new(BTreeMap::new()),
            queues: (0..workers).map(|_| Mutex::new(VecDeque::new())).collect(),
            queued: AtomicUsize::new(0),
            done: AtomicUsize::new(0),
            completed: AtomicUsize::new(0),
            active: AtomicUsize::new(initial),
            aborted: AtomicBool::new(false),
            failure: Mutex::new(None),
            wake: (Mutex::new(()), Condvar::new()),
            timeline: Mutex::new(vec![(0, initial)]),
        }
    }

    fn total(&self) -> usize {
        self.plan.entities.len()
    }

    fn finished(&self) -> bool {
        self.aborted.load(Ordering::SeqCst) || self.done.load(Ordering::SeqCst) == self.total()
    }

    fn notify(&self) {
        let _g = lock(&self.wake.0);
        self.wake.1.notify_all();
    }

    fn make_roots_ready(&self) {
        for e in 0..self.total() {
            if self.plan.hard_preds[e] == 0 {
                self.make_ready(e, 0);
            }
        }
    }

    /// Binds the inputs of entity `e`, expands it into its instance tasks and
    /// queues them on `worker`.
    fn make_ready(&self, e: usize, worker: usize) {
        let ent = &self.plan.entities[e];
        let inputs: Vec<Value> = {
            let streams = lock(&self.streams);
            ent.inputs
                .iter()
                .map(|p| streams.get(&p.name).cloned().unwrap_or(Value::Unit))
                .collect()
        };
        let partitions: Vec<Partition> = if ent
            .inputs
            .iter()
            .any(|p| p.cardinality == Cardinality::Stream)
        {
            partition_map(ent, &inputs, self.plan.parts[e])
                .expect("partition counts and arity are checked while planning")
                .into_iter()
                .map(|t| t.partition)
                .collect()
        } else {
            vec![Partition::whole(0)]
        };
        {
            let mut slot = lock(&self.slots[e]);
            slot.inputs = Arc::new(inputs);
            slot.outputs = vec![None; partitions.len()];
            slot.left = partitions.len();
        }
        let mut q = lock(&self.queues[worker]);
        for p in partitions {
            let id = TaskId::new(ent.id.clone(), p.index);
            self.log.record(worker, Some(&id), EventKind::Ready);
            q.push_back(Job {
                entity: e,
                partition: p,
            });
            self.queued.fetch_add(1, Ordering::SeqCst);
        }
        drop(q);
        self.notify();
    }

    /// Runs one task. Returns `false` when it failed.
    fn execute(&self, worker: usize, job: Job) -> bool {
        let e = job.entity;
        let ent = &self.plan.entities[e];
        let id = TaskId::new(ent.id.clone(), job.partition.index);
        let index = job.partition.index as usize;
        let inputs = lock(&self.slots[e]).inputs.clone();
        self.log.record(worker, Some(&id), EventKind::Start);
        let kernel = &self.plan.kernels[e];
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let mut ctx = KernelContext {
                task: &id,
                worker,
                partition: job.partition.clone(),
                ports: &ent.inputs,
                inputs: &inputs,
                memory: self.runtime.memory(),
                log: &self.log,
            };
            kernel.run(&mut ctx)
        }));
        let result = match outcome {
            Ok(Ok(values)) => check_outputs(ent, values),
            Ok(Err(err)) => Err(err.message),
            Err(payload) => Err(format!("panic: {}", panic_message(payload.as_ref()))),
        };
        let values = match result {
            Ok(v) => v,
            Err(cause) => {
                self.log
                    .record(worker, Some(&id), EventKind::Fail { cause: cause.clone() });
                let mut f = lock(&self.failure);
                if f.is_none() {
                    *f = Some((id, cause));
                }
                drop(f);
                self.aborted.store(true, Ordering::SeqCst);
                self.notify();
                return false;
            }
        };
        self.log.record(worker, Some(&id), EventKind::Finish);
        if self.runtime.memory().config().binding == ColorBinding::Worker {
            self.runtime.memory().release(&Color::Worker(worker), &self.log);
        }

        let complete = {
            let mut slot = lock(&self.slots[e]);
            slot.outputs[index] = Some(values);
            slot.left -= 1;
            (slot.left == 0).then(|| std::mem::take(&mut slot.outputs))
        };
        if let Some(parts) = complete {
            self.complete_entity(e, worker, parts);
        }

        let c = self.completed.fetch_add(1, Ordering::SeqCst) + 1;
        if self.cfg.mode == Mode::Parallel && c % self.cfg.resize_quantum == 0 {
            self.maybe_resize(worker);
        }
        true
    }

    fn complete_entity(&self, e: usize, worker: usize, parts: Vec<Option<Vec<Value>>>) {
        let ent = &self.plan.entities[e];
        let mut parts: Vec<Vec<Value>> = parts
            .into_iter()
            .map(|p| p.expect("every instance finished"))
            .collect();
        let outputs: Vec<Value> = if parts.len() == 1 {
            parts.pop().unwrap_or_default()
        } else {
            (0..ent.outputs.len())
                .map(|k| {
                    Value::concat_parts(parts.iter().map(|p| p[k].clone()).collect())
                        .expect("output types are checked per instance and while planning")
                })
                .collect()
        };
        {
            let mut streams = lock(&self.streams);
            for (p, v) in ent.outputs.iter().zip(&outputs) {
                streams.insert(p.name.clone(), v.clone());
            }
        }
        lock(&self.results).insert(e, outputs);
        if self.runtime.memory().config().binding == ColorBinding::Entity {
            self.runtime
                .memory()
                .release(&Color::Entity(ent.id.clone()), &self.log);
        }
        for &s in &self.plan.soft_succ[e] {
            self.soft_left[s].fetch_sub(1, Ordering::SeqCst);
        }
        for &s in &self.plan.succ[e] {
            if self.hard_left[s].fetch_sub(1, Ordering::SeqCst) == 1 {
                self.make_ready(s, worker);
            }
        }
        self.done.fetch_add(1, Ordering::SeqCst);
        self.notify();
    }

    fn maybe_resize(&self, worker: usize) {
        let cur = self.active.load(Ordering::SeqCst);
        let next = resize_pool(cur, self.queued.load(Ordering::SeqCst), self.cfg);
        if next != cur
            && self
                .active
                .compare_exchange(cur, next, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
        {
            let seq = self
                .log
                .record(worker, None, EventKind::Resize { from: cur, to: next });
            lock(&self.timeline).push((seq, next));
            self.notify();
        }
    }

    /// Own queue first: a random task among those whose soft predecessors
    /// have all completed, else a random task.
    fn pop_own(&self, worker: usize, rng: &mut ChaCha8Rng) -> Option<Job> {
        let mut q = lock(&self.queues[worker]);
        if q.is_empty() {
            return None;
        }
        let preferred: Vec<usize> = (0..q.len())
            .filter(|&i| self.soft_left[q[i].entity].load(Ordering::SeqCst) == 0)
            .collect();
        let i = if preferred.is_empty() {
            rng.gen_range(0..q.len())
        } else {
            preferred[rng.gen_range(0..preferred.len())]
        };
        let job = q.remove(i);
        if job.is_some() {
            self.queued.fetch_sub(1, Ordering::SeqCst);
        }
        job
    }

    /// Takes the oldest task of a random victim, scanning the others if
    /// that one is empty.
    fn steal(&self, worker: usize, rng: &mut ChaCha8Rng) -> Option<Job> {
        let n = self.queues.len();
        if n < 2 {
            return None;
        }
        let first = rng.gen_range(0..n - 1);
        for k in 0..n - 1 {
            let victim = (worker + 1 + (first + k) % (n - 1)) % n;
            let mut q = lock(&self.queues[victim]);
            if let Some(job) = q.pop_front() {
                self.queued.fetch_sub(1, Ordering::SeqCst);
                let id = TaskId::new(self.plan.entities[job.entity].id.clone(), job.partition.index);
                self.log.record(worker, Some(&id), EventKind::Steal { victim });
                return Some(job);
            }
        }
        None
    }

    fn worker_loop(&self, worker: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_add((worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        while !self.finished() {
            if worker < self.active.load(Ordering::SeqCst) {
                let job = self
                    .pop_own(worker, &mut rng)
                    .or_else(|| self.steal(worker, &mut rng));
                if let Some(job) = job {
                    self.execute(worker, job);
                    continue;
                }
            }
            let g = lock(&self.wake.0);
            let busy = worker < self.active.load(Ordering::SeqCst)
                && self.queued.load(Ordering::SeqCst) > 0;
            if !busy && !self.finished() {
                let _ = self
                    .wake
                    .1
                    .wait_timeout(g, Duration::from_millis(1))
                    .unwrap_or_else(|p| p.into_inner());
            }
        }
    }

    fn parallel(&self) {
        if self.total() == 0 {
            return;
        }
        self.make_roots_ready();
        std::thread::scope(|s| {
            for w in 0..self.queues.len() {
                s.spawn(move || self.worker_loop(w));
            }
        });
    }

    fn sequential(&self, seed: u64) -> Result<(), SchedulerError> {
        let order = topological_order(&self.plan.graph, seed)?;
        let index: BTreeMap<_, _> = self
            .plan
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        self.make_roots_ready();
        for id in order {
            let e = index[&id];
            let mut jobs: Vec<Job> = {
                let mut q = lock(&self.queues[0]);
                let (mine, rest): (Vec<Job>, Vec<Job>) = q.drain(..).partition(|j| j.entity == e);
                q.extend(rest);
                mine
            };
            jobs.sort_by_key(|j| j.partition.index);
            for job in jobs {
                self.queued.fetch_sub(1, Ordering::SeqCst);
                if !self.execute(0, job) {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn finish(self, mode: Mode) -> Result<RunReport, SchedulerError> {
        let accesses = self.log.accesses();
        if let Some((task, message)) = lock(&self.failure).take() {
            let trace = self.log.trace(true);
            let cause = format!("task {task}: {message}");
            let dump_path = self.cfg.dump_on_error.as_ref().and_then(|path| {
                match dump_core(&self.plan.graph, &trace, &accesses, &cause, path) {
                    Ok(p) => Some(p),
                    Err(err) => {
                        log::error!("could not write core dump: {err}");
                        None
                    }
                }
            });
            return Err(SchedulerError::KernelPanic {
                task,
                message,
                failure: Box::new(FailureSnapshot {
                    trace,
                    accesses,
                    dump_path,
                }),
            });
        }

        let trace = self.log.trace(false);
        let mut lifecycle_errors = trace.lifecycle_errors();
        let violations = match verify_trace(&self.plan.graph, &trace) {
            Ok(v) => v,
            Err(err) => {
                lifecycle_errors.push(err.to_string());
                Vec::new()
            }
        };
        let disposition = self.runtime.memory().config().disposition;
        let races = if accesses.is_empty() {
            RaceReport {
                pairs: Vec::new(),
                disposition,
            }
        } else {
            match analyze_races_with(&trace, &accesses, &self.plan.graph, disposition) {
                Ok(r) => r,
                Err(err) => {
                    lifecycle_errors.push(err.to_string());
                    RaceReport {
                        pairs: Vec::new(),
                        disposition,
                    }
                }
            }
        };

        let mut results = std::mem::take(&mut *lock(&self.results));
        let mut outputs = BTreeMap::new();
        for sink in self.plan.graph.sinks() {
            let Some(e) = self.plan.entities.iter().position(|x| x.id == sink) else {
                continue;
            };
            let values = results.remove(&e).unwrap_or_default();
            let ports = self.plan.entities[e]
                .outputs
                .iter()
                .map(|p| p.name.clone())
                .zip(values)
                .collect();
            outputs.insert(sink, ports);
        }

        Ok(RunReport {
            mode,
            outputs,
            streams: std::mem::take(&mut *lock(&self.streams)),
            trace,
            recolors: self.log.recolors(),
            accesses,
            worker_timeline: std::mem::take(&mut *lock(&self.timeline)),
            violations,
            lifecycle_errors,
            races,
            warnings: self.plan.warnings.clone(),
        })
    }
}

fn check_outputs(ent: &StreamEntity, values: Vec<Value>) -> Result<Vec<Value>, String> {
    if values.len() != ent.outputs.len() {
        return Err(format!(
            "kernel `{}` returned {} outputs, entity declares {}",
            ent.kernel.name,
            values.len(),
            ent.outputs.len()
        ));
    }
    for (p, v) in ent.outputs.iter().zip(&values) {
        if v.datatype() != p.datatype {
            return Err(format!(
                "output `{}` should be {} but kernel returned {}",
                p.name,
                p.datatype,
                v.datatype()
            ));
        }
    }
    Ok(values)
}

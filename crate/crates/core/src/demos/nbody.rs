//! Gravitational n-body stepping, both as plain generic code and as a
//! five-stage stream program run by the scheduler.
//!
//! Units: G = 1. Pairwise forces use the softened distance
//! `s = sqrt(r² + ε²)` with ε = 1e-9, and each step is semi-implicit Euler:
//! velocities first, then positions with the new velocities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::entity::{EntityBuilder, EntityError, Partitioning, PortSpec, StreamEntity};
use crate::algebra::{compose, Wire};
use crate::graph::{build_graph, GraphError, Hypergraph};
use crate::kernel::{KernelContext, KernelError, KernelRegistry, KernelResult};
use crate::scalar::Scalar;
use crate::scheduler::{run, RunReport, Runtime, SchedulerConfig, SchedulerError, StreamData};
use crate::value::{DataType, Value};

pub const SOFTENING: f64 = 1e-9;
/// Bodies closer than this are reported as coincident.
pub const COINCIDENT_DISTANCE: f64 = 1e-9;

pub const STAGES: [&str; 5] = [
    "space_subdivision",
    "tree_construction",
    "mass_center_calc",
    "approximate_force",
    "position_update",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NBodyError {
    #[error("bodies {i} and {j} coincide")]
    CoincidentBodies { i: usize, j: usize },
    #[error("body arrays disagree in length: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodySet<S: Scalar> {
    pub x: Vec<[S; 3]>,
    pub v: Vec<[S; 3]>,
    pub m: Vec<S>,
}

impl<S: Scalar> BodySet<S> {
    pub fn new(x: Vec<[S; 3]>, v: Vec<[S; 3]>, m: Vec<S>) -> Result<Self, NBodyError> {
        if x.len() != v.len() || x.len() != m.len() {
            return Err(NBodyError::ShapeMismatch(format!(
                "{} positions, {} velocities, {} masses",
                x.len(),
                v.len(),
                m.len()
            )));
        }
        Ok(BodySet { x, v, m })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `n` bodies in the cube [-1, 1]³ with small random velocities and
    /// total mass 1.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v3 = |scale: f64| -> [S; 3] {
            [0, 1, 2].map(|_| S::lit(rng.gen_range(-scale..scale)))
        };
        let x: Vec<[S; 3]> = (0..n).map(|_| v3(1.0)).collect();
        let v: Vec<[S; 3]> = (0..n).map(|_| v3(0.05)).collect();
        let m = (0..n)
            .map(|_| S::lit(rng.gen_range(0.5..1.5) / n.max(1) as f64))
            .collect();
        BodySet { x, v, m }
    }

    pub fn momentum(&self) -> [S; 3] {
        let mut p = [S::zero(); 3];
        for (v, &m) in self.v.iter().zip(&self.m) {
            for k in 0..3 {
                p[k] = p[k] + m * v[k];
            }
        }
        p
    }

    /// Kinetic plus softened potential energy.
    pub fn energy(&self) -> S {
        let eps2 = S::lit(SOFTENING * SOFTENING);
        let half = S::lit(0.5);
        let mut e = S::zero();
        for i in 0..self.len() {
            let v = self.v[i];
            e = e + half * self.m[i] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            for j in i + 1..self.len() {
                let d = sub(self.x[j], self.x[i]);
                e = e - self.m[i] * self.m[j] / (norm2(d) + eps2).sqrt();
            }
        }
        e
    }
}

pub type BodySet32 = BodySet<f32>;
pub type BodySet64 = BodySet<f64>;

fn sub<S: Scalar>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm2<S: Scalar>(d: [S; 3]) -> S {
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Accelerations of the bodies in `range`, each a direct sum over all other
/// bodies in index order. The result for a body does not depend on how the
/// index range is split.
pub fn accelerations<S: Scalar>(
    x: &[[S; 3]],
    m: &[S],
    range: std::ops::Range<usize>,
) -> Result<Vec<[S; 3]>, NBodyError> {
    let eps2 = S::lit(SOFTENING * SOFTENING);
    let close = S::lit(COINCIDENT_DISTANCE);
    let mut out = Vec::with_capacity(range.len());
    for i in range {
        let mut a = [S::zero(); 3];
        for j in 0..x.len() {
            if j == i {
                continue;
            }
            let d = sub(x[j], x[i]);
            let r2 = norm2(d);
            if r2.sqrt() < close {
                return Err(NBodyError::CoincidentBodies {
                    i: i.min(j),
                    j: i.max(j),
                });
            }
            let s = (r2 + eps2).sqrt();
            let w = m[j] / (s * s * s);
            for k in 0..3 {
                a[k] = a[k] + w * d[k];
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// One semi-implicit Euler step.
pub fn step<S: Scalar>(b: &BodySet<S>, dt: S) -> Result<BodySet<S>, NBodyError> {
    let acc = accelerations(&b.x, &b.m, 0..b.len())?;
    Ok(integrate(b, &acc, dt))
}

fn integrate<S: Scalar>(b: &BodySet<S>, acc: &[[S; 3]], dt: S) -> BodySet<S> {
    let mut x = b.x.clone();
    let mut v = b.v.clone();
    for i in 0..b.len() {
        for k in 0..3 {
            v[i][k] = v[i][k] + acc[i][k] * dt;
            x[i][k] = x[i][k] + v[i][k] * dt;
        }
    }
    BodySet { x, v, m: b.m.clone() }
}

pub fn simulate<S: Scalar>(b: &BodySet<S>, dt: S, steps: usize) -> Result<BodySet<S>, NBodyError> {
    let mut cur = b.clone();
    for _ in 0..steps {
        cur = step(&cur, dt)?;
    }
    Ok(cur)
}

fn vec3s(ctx: &KernelContext<'_>, i: usize) -> Result<Vec<[f64; 3]>, KernelError> {
    ctx.input(i)
        .as_vec3s()
        .map(<[_]>::to_vec)
        .ok_or_else(|| KernelError::new(format!("input {i} is not vec3s")))
}

fn scalars(ctx: &KernelContext<'_>, i: usize) -> Result<Vec<f64>, KernelError> {
    ctx.input(i)
        .as_scalars()
        .map(<[_]>::to_vec)
        .ok_or_else(|| KernelError::new(format!("input {i} is not scalars")))
}

fn space_subdivision(ctx: &mut KernelContext<'_>) -> KernelResult {
    let x = vec3s(ctx, 0)?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &x {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ok(vec![Value::Scalars(lo.into_iter().chain(hi).collect())])
}

fn spread_bits(mut v: u64) -> u64 {
    v &= 0x3ff;
    v = (v | (v << 16)) & 0x0300_00ff;
    v = (v | (v << 8)) & 0x0300_f00f;
    v = (v | (v << 4)) & 0x030c_30c3;
    (v | (v << 2)) & 0x0924_9249
}

/// Bodies ordered along a Morton curve over the bounding box: the leaf order
/// of an octree built over the same box.
fn tree_construction(ctx: &mut KernelContext<'_>) -> KernelResult {
    let x = vec3s(ctx, 0)?;
    let b = scalars(ctx, 1)?;
    if b.len() != 6 {
        return Err(KernelError::new("bounds must hold six numbers"));
    }
    let code = |p: &[f64; 3]| -> u64 {
        (0..3)
            .map(|k| {
                let span = (b[k + 3] - b[k]).max(f64::MIN_POSITIVE);
                let q = ((p[k] - b[k]) / span * 1023.0).clamp(0.0, 1023.0) as u64;
                spread_bits(q) << k
            })
            .fold(0, |acc, c| acc | c)
    };
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by_key(|&i| (code(&x[i]), i));
    Ok(vec![Value::Scalars(order.into_iter().map(|i| i as f64).collect())])
}

fn mass_center_calc(ctx: &mut KernelContext<'_>) -> KernelResult {
    let x = vec3s(ctx, 0)?;
    let m = scalars(ctx, 1)?;
    let order = scalars(ctx, 2)?;
    let mut c = [0.0; 3];
    let mut total = 0.0;
    for &i in &order {
        let i = i as usize;
        total += m[i];
        for k in 0..3 {
            c[k] += m[i] * x[i][k];
        }
    }
    if total > 0.0 {
        c = c.map(|v| v / total);
    }
    Ok(vec![Value::Scalars(vec![c[0], c[1], c[2], total])])
}

/// Forces for this task's block of bodies. The opening criterion is zero, so
/// every interaction is summed exactly.
fn approximate_force(ctx: &mut KernelContext<'_>) -> KernelResult {
    let x = vec3s(ctx, 0)?;
    let m = scalars(ctx, 1)?;
    let range = ctx.partition().range.clone();
    let acc = accelerations(&x, &m, range).map_err(|e| KernelError::new(e.to_string()))?;
    Ok(vec![Value::Vec3s(acc)])
}

fn position_update(ctx: &mut KernelContext<'_>) -> KernelResult {
    let x = vec3s(ctx, 0)?;
    let v = vec3s(ctx, 1)?;
    let acc = vec3s(ctx, 2)?;
    let dt = ctx
        .input(3)
        .as_scalar()
        .ok_or_else(|| KernelError::new("dt must be a scalar"))?;
    if acc.len() != x.len() {
        return Err(KernelError::new("acceleration count differs from body count"));
    }
    let b = BodySet {
        x,
        v,
        m: vec![0.0; acc.len()],
    };
    let next = integrate(&b, &acc, dt);
    Ok(vec![Value::Vec3s(next.x), Value::Vec3s(next.v)])
}

pub fn nbody_kernels() -> KernelRegistry {
    let mut r = KernelRegistry::new();
    let table: [(&str, usize, usize, fn(&mut KernelContext<'_>) -> KernelResult); 5] = [
        ("nbody.space_subdivision", 1, 1, space_subdivision),
        ("nbody.tree_construction", 2, 1, tree_construction),
        ("nbody.mass_center_calc", 3, 1, mass_center_calc),
        ("nbody.approximate_force", 3, 1, approximate_force),
        ("nbody.position_update", 4, 2, position_update),
    ];
    for (name, i, o, f) in table {
        r.register_fn(name, i, o, f).expect("distinct kernel names");
    }
    r
}

/// The per-step program: five leaves under one composite `nbody_step`, with
/// the force stage split into `partitions` data-parallel instances.
pub fn nbody_step_entity(registry: &KernelRegistry, partitions: u32) -> Result<StreamEntity, NBodyError> {
    use DataType::{Scalar as S1, Scalars as SN, Vec3s as V3};
    let mut b = EntityBuilder::new(registry);
    let fx = |n: &str, t| PortSpec::fixed(n, t);
    let sub = b.make_entity(
        "space_subdivision",
        "nbody.space_subdivision",
        vec![fx("x", V3)],
        vec![fx("bounds", SN)],
        vec![],
    )?;
    let tree = b.make_entity(
        "tree_construction",
        "nbody.tree_construction",
        vec![fx("x", V3), fx("bounds", SN)],
        vec![fx("order", SN)],
        vec![],
    )?;
    let com = b.make_entity(
        "mass_center_calc",
        "nbody.mass_center_calc",
        vec![fx("x", V3), fx("m", SN), fx("order", SN)],
        vec![fx("com", SN)],
        vec![],
    )?;
    let force = b
        .make_entity(
            "approximate_force",
            "nbody.approximate_force",
            vec![PortSpec::stream("x", V3), fx("m", SN), fx("com", SN)],
            vec![PortSpec::stream("acc", V3)],
            vec![],
        )?
        .with_partitioning(Partitioning::Fixed(partitions.max(1)));
    let update = b.make_entity(
        "position_update",
        "nbody.position_update",
        vec![fx("x", V3), fx("v", V3), fx("acc", V3), fx("dt", S1)],
        vec![fx("x_next", V3), fx("v_next", V3)],
        vec![],
    )?;
    let wires = [
        Wire::new("x", "space_subdivision", "x"),
        Wire::new("m", "mass_center_calc", "m"),
        Wire::new("v", "position_update", "v"),
        Wire::new("dt", "position_update", "dt"),
        Wire::new("x_next", "position_update", "x_next"),
        Wire::new("v_next", "position_update", "v_next"),
    ];
    Ok(compose("nbody_step", vec![sub, tree, com, force, update], &wires)?)
}

pub fn nbody_step_graph(registry: &KernelRegistry, partitions: u32) -> Result<Hypergraph, NBodyError> {
    Ok(build_graph(&nbody_step_entity(registry, partitions)?)?)
}

pub fn step_inputs(b: &BodySet64, dt: f64) -> StreamData {
    StreamData::from([
        ("x".to_owned(), Value::Vec3s(b.x.clone())),
        ("v".to_owned(), Value::Vec3s(b.v.clone())),
        ("m".to_owned(), Value::Scalars(b.m.clone())),
        ("dt".to_owned(), Value::Scalar(dt)),
    ])
}

#[derive(Debug, Clone)]
pub struct NBodyRun {
    pub bodies: BodySet64,
    pub reports: Vec<RunReport>,
}

/// Runs `steps` steps through the scheduler, one fresh graph execution per
/// step.
pub fn run_nbody(
    bodies: &BodySet64,
    dt: f64,
    steps: usize,
    partitions: u32,
    cfg: &SchedulerConfig,
) -> Result<NBodyRun, NBodyError> {
    let runtime = Runtime::new(nbody_kernels());
    let g = nbody_step_graph(runtime.kernels(), partitions)?;
    let mut cur = bodies.clone();
    let mut reports = Vec::with_capacity(steps);
    for _ in 0..steps {
        let report = run(&g, &runtime, &step_inputs(&cur, dt), cfg)?;
        let take = |name: &str| -> Result<Vec<[f64; 3]>, NBodyError> {
            report
                .streams
                .get(name)
                .and_then(Value::as_vec3s)
                .map(<[_]>::to_vec)
                .ok_or_else(|| NBodyError::ShapeMismatch(format!("run produced no `{name}`")))
        };
        cur = BodySet {
            x: take("x_next")?,
            v: take("v_next")?,
            m: cur.m,
        };
        reports.push(report);
    }
    Ok(NBodyRun {
        bodies: cur,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bodies_attract() {
        let b = BodySet64::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[0.0; 3]; 2],
            vec![1.0, 1.0],
        )
        .unwrap();
        let a = accelerations(&b.x, &b.m, 0..2).unwrap();
        assert!(a[0][0] > 0.0 && a[1][0] < 0.0);
        assert!((a[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_bodies_are_an_error() {
        let b = BodySet64::new(vec![[0.5; 3]; 2], vec![[0.0; 3]; 2], vec![1.0; 2]).unwrap();
        assert_eq!(
            step(&b, 0.01).unwrap_err(),
            NBodyError::CoincidentBodies { i: 0, j: 1 }
        );
    }

    #[test]
    fn generic_over_precision() {
        let b32 = BodySet32::random(16, 3);
        let b64 = BodySet64::random(16, 3);
        let s32 = simulate(&b32, 1e-3, 5).unwrap();
        let s64 = simulate(&b64, 1e-3, 5).unwrap();
        for (p, q) in s32.x.iter().zip(&s64.x) {
            for k in 0..3 {
                assert!((p[k] as f64 - q[k]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn morton_spread_interleaves() {
        assert_eq!(spread_bits(0b11), 0b1001);
        assert_eq!(spread_bits(0x3ff).count_ones(), 10);
    }
}

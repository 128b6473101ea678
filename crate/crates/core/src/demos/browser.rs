//! A toy page-rendering pipeline built with the entity algebra:
//!
//! ```text
//! (parse_html | parse_css) ; synthesis{style, layout} ; rendering{paint, composite}
//! ```
//!
//! Kernels do a little deterministic arithmetic on the page bytes and sleep
//! for a configurable cost, so the pipeline exercises the scheduler without
//! depending on the host's core count. Each stage keeps scratch state in its
//! own colored cell.

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::algebra::{add_parallel, compose, concat, Wire};
use crate::entity::{EntityBuilder, EntityError, PortSpec, StreamEntity};
use crate::graph::{build_graph, GraphError, Hypergraph};
use crate::kernel::{KernelContext, KernelError, KernelRegistry, KernelResult};
use crate::memguard::{CellPolicy, GuardConfig, MemError, Memory};
use crate::scheduler::{Runtime, StreamData};
use crate::value::{DataType, Value};

pub const STAGES: [&str; 6] = ["parse_html", "parse_css", "style", "layout", "paint", "composite"];

fn scratch(stage: &str) -> String {
    format!("{stage}.scratch")
}

fn numbers(v: &Value) -> Result<Vec<f64>, KernelError> {
    match v {
        Value::Scalars(xs) => Ok(xs.clone()),
        Value::Bytes(bs) => Ok(bs.iter().map(|&b| b as f64).collect()),
        other => Err(KernelError::new(format!("unexpected {}", other.datatype()))),
    }
}

type Body = fn(&[Vec<f64>]) -> Value;

fn stage_kernel(name: &'static str, cost: Duration, body: Body) -> impl Fn(&mut KernelContext<'_>) -> KernelResult {
    move |ctx| {
        let ins = (0..ctx.inputs().len())
            .map(|i| numbers(&ctx.block(i)))
            .collect::<Result<Vec<_>, _>>()?;
        std::thread::sleep(cost);
        let out = body(&ins);
        ctx.write(&scratch(name), Value::Scalar(out.element_count() as f64))?;
        Ok(vec![out])
    }
}

fn checksum(xs: &[f64]) -> f64 {
    xs.iter()
        .enumerate()
        .fold(0.0, |acc, (i, x)| acc + x * ((i % 7) as f64 + 1.0))
}

/// Kernels for the six stages, each sleeping `cost` per call.
pub fn browser_kernels(cost: Duration) -> KernelRegistry {
    let mut r = KernelRegistry::new();
    let bodies: [(&'static str, usize, Body); 6] = [
        ("parse_html", 1, |i| {
            Value::Scalars(i[0].iter().filter(|&&b| b == b'<' as f64).map(|_| 1.0).collect())
        }),
        ("parse_css", 1, |i| {
            Value::Scalars(vec![i[0].iter().filter(|&&b| b == b'{' as f64).count() as f64])
        }),
        ("style", 2, |i| Value::Scalars(vec![i[0].len() as f64, checksum(&i[1])])),
        ("layout", 1, |i| Value::Scalars(i[0].iter().map(|x| x * 2.0 + 1.0).collect())),
        ("paint", 1, |i| {
            Value::Bytes(i[0].iter().map(|x| (*x as u64 % 251) as u8).collect())
        }),
        ("composite", 1, |i| Value::Bytes(vec![(checksum(&i[0]) as u64 % 256) as u8])),
    ];
    for (name, ins, body) in bodies {
        r.register(name, ins, 1, Arc::new(stage_kernel(name, cost, body)))
            .expect("distinct stage names");
    }
    r
}

/// One colored scratch cell per stage.
pub fn browser_memory(config: GuardConfig) -> Result<Memory, MemError> {
    let mut m = Memory::new(config);
    for s in STAGES {
        m.register(scratch(s), CellPolicy::Color, Value::Unit)?;
    }
    Ok(m)
}

pub fn browser_runtime(cost: Duration) -> Runtime {
    Runtime::with_memory(
        browser_kernels(cost),
        browser_memory(GuardConfig::default()).expect("distinct cell names"),
    )
}

pub fn browser_entity(registry: &KernelRegistry) -> Result<StreamEntity, EntityError> {
    use DataType::{Bytes, Scalars};
    let mut b = EntityBuilder::new(registry);
    let p = |n: &str, t| PortSpec::fixed(n, t);
    let html = b.make_entity("parse_html", "parse_html", vec![p("page", Bytes)], vec![p("dom", Scalars)], vec![])?;
    let css = b.make_entity("parse_css", "parse_css", vec![p("page", Bytes)], vec![p("cssom", Scalars)], vec![])?;
    let style = b.make_entity(
        "style",
        "style",
        vec![p("dom", Scalars), p("cssom", Scalars)],
        vec![p("styled", Scalars)],
        vec![],
    )?;
    let layout = b.make_entity("layout", "layout", vec![p("styled", Scalars)], vec![p("boxes", Scalars)], vec![])?;
    let paint = b.make_entity("paint", "paint", vec![p("boxes", Scalars)], vec![p("pixels", Bytes)], vec![])?;
    let comp = b.make_entity("composite", "composite", vec![p("pixels", Bytes)], vec![p("frame", Bytes)], vec![])?;

    let parsing = add_parallel(html, css)?;
    let synthesis = compose(
        "synthesis",
        vec![style, layout],
        &[
            Wire::new("dom", "style", "dom"),
            Wire::new("cssom", "style", "cssom"),
            Wire::new("boxes", "layout", "boxes"),
        ],
    )?;
    let rendering = compose(
        "rendering",
        vec![paint, comp],
        &[
            Wire::new("boxes", "paint", "boxes"),
            Wire::new("frame", "composite", "frame"),
        ],
    )?;
    concat(concat(parsing, synthesis)?, rendering)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrowserError {
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn browser_graph(registry: &KernelRegistry) -> Result<Hypergraph, BrowserError> {
    Ok(build_graph(&browser_entity(registry)?)?)
}

pub fn browser_inputs(page: &str) -> StreamData {
    StreamData::from([("page".to_owned(), Value::Bytes(page.as_bytes().to_vec()))])
}

pub const SAMPLE_PAGE: &str =
    "<html><head><style>p { color: red } h1 { margin: 0 }</style></head><body><h1>t</h1><p>x</p></body></html>";

//! Trace verification and core dumps.
//!
//! A core dump is `"GSCD" | u16 version` followed by three blocks, each a
//! `u32` length and its bytes: the graph segment, the trace block (JSON) and
//! the race block (JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::EntityId;
use crate::graph::{flat_view, Hypergraph};
use crate::manifest::{emit_segment, load_segment, SegmentError};
use crate::memguard::{analyze_races, AccessEvent, RaceReport};
use crate::scheduler::task::{TaskId, TaskState};
use crate::scheduler::trace::ExecutionTrace;

pub const DUMP_MAGIC: &[u8; 4] = b"GSCD";
pub const DUMP_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosticsError {
    #[error("trace mentions task {0}, which is not a leaf of the graph")]
    UnknownTaskInTrace(TaskId),
    #[error("not a core dump (bad magic)")]
    BadMagic,
    #[error("core dump version {0} is not supported")]
    VersionUnsupported(u16),
    #[error("core dump is truncated in block {0}")]
    Truncated(usize),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("json: {0}")]
    Json(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// A hard pair `before -> after` that the trace does not respect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub before: EntityId,
    pub after: EntityId,
    /// Latest finish among `before`'s instances, if all finished.
    pub before_finish: Option<u64>,
    /// Earliest start among `after`'s instances.
    pub after_start: u64,
}

/// Checks every hard precedence pair against the trace: each instance of the
/// earlier entity must finish before any instance of the later one starts.
/// Pairs whose later entity never started are not violated.
pub fn verify_trace(g: &Hypergraph, trace: &ExecutionTrace) -> Result<Vec<Violation>, DiagnosticsError> {
    let g = flat_view(g);
    let leaves: BTreeSet<&EntityId> = g.leaf_ids().collect();
    #[derive(Default)]
    struct Agg {
        tasks: usize,
        unfinished: bool,
        max_finish: u64,
        min_start: Option<u64>,
    }
    let mut per: BTreeMap<&EntityId, Agg> = BTreeMap::new();
    let spans = trace.spans();
    for (task, span) in &spans {
        if !leaves.contains(&task.entity) {
            return Err(DiagnosticsError::UnknownTaskInTrace(task.clone()));
        }
        let a = per.entry(&task.entity).or_default();
        a.tasks += 1;
        match span.finish {
            Some(f) => a.max_finish = a.max_finish.max(f),
            None => a.unfinished = true,
        }
        if let Some(s) = span.start {
            a.min_start = Some(a.min_start.map_or(s, |m| m.min(s)));
        }
    }
    let mut out = Vec::new();
    for (a, b) in g.hard_pairs() {
        let Some(start) = per.get(&b).and_then(|x| x.min_start) else {
            continue;
        };
        let before = per.get(&a);
        let finish = before
            .filter(|x| x.tasks > 0 && !x.unfinished)
            .map(|x| x.max_finish);
        if finish.is_none_or(|f| f >= start) {
            out.push(Violation {
                before: a,
                after: b,
                before_finish: finish,
                after_start: start,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceBlock {
    partial: bool,
    cause: String,
    trace: ExecutionTrace,
    accesses: Vec<AccessEvent>,
    task_states: Vec<(TaskId, TaskState)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RaceBlock {
    report: Option<RaceReport>,
    error: Option<String>,
}

/// Decoded contents of a core dump.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreDump {
    pub graph: Hypergraph,
    pub cause: String,
    pub trace: ExecutionTrace,
    pub accesses: Vec<AccessEvent>,
    pub task_states: BTreeMap<TaskId, TaskState>,
    pub races: Option<RaceReport>,
    pub race_error: Option<String>,
}

impl CoreDump {
    /// Human-readable summary for `genesc inspect`.
    pub fn summary(&self) -> String {
        let mut counts: BTreeMap<TaskState, usize> = BTreeMap::new();
        for s in self.task_states.values() {
            *counts.entry(*s).or_default() += 1;
        }
        let mut out = format!(
            "cause: {}\nentities: {}  edges: {}\nevents: {}  accesses: {}  partial: {}\n",
            self.cause,
            self.graph.vertices().len(),
            self.graph.edges().len(),
            self.trace.len(),
            self.accesses.len(),
            self.trace.partial,
        );
        for (s, n) in counts {
            out.push_str(&format!("  {s:?}: {n}\n"));
        }
        for (t, s) in &self.task_states {
            if matches!(s, TaskState::Failed | TaskState::Running) {
                out.push_str(&format!("  {t} {s:?}\n"));
            }
        }
        match (&self.races, &self.race_error) {
            (Some(r), _) => out.push_str(&format!("races: {}\n", r.pairs.len())),
            (None, Some(e)) => out.push_str(&format!("races: unavailable ({e})\n")),
            _ => {}
        }
        out
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("dump blocks serialize to json")
}

pub fn encode_core(
    g: &Hypergraph,
    trace: &ExecutionTrace,
    accesses: &[AccessEvent],
    cause: &str,
) -> Vec<u8> {
    let trace_block = TraceBlock {
        partial: trace.partial,
        cause: cause.to_owned(),
        trace: trace.clone(),
        accesses: accesses.to_vec(),
        task_states: trace.task_states().into_iter().collect(),
    };
    let race_block = match analyze_races(trace, accesses, g) {
        Ok(r) => RaceBlock {
            report: Some(r),
            error: None,
        },
        Err(e) => RaceBlock {
            report: None,
            error: Some(e.to_string()),
        },
    };
    let mut out = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    for block in [emit_segment(g), json(&trace_block), json(&race_block)] {
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(&block);
    }
    out
}

pub fn decode_core(bytes: &[u8]) -> Result<CoreDump, DiagnosticsError> {
    if bytes.len() < 4 || &bytes[..4] != DUMP_MAGIC {
        return Err(DiagnosticsError::BadMagic);
    }
    let version = bytes
        .get(4..6)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(DiagnosticsError::Truncated(0))?;
    if version != DUMP_VERSION {
        return Err(DiagnosticsError::VersionUnsupported(version));
    }
    let mut pos = 6;
    let mut blocks = Vec::new();
    for i in 0..3 {
        let len = bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or(DiagnosticsError::Truncated(i))?;
        let block = bytes
            .get(pos + 4..pos + 4 + len)
            .ok_or(DiagnosticsError::Truncated(i))?;
        blocks.push(block);
        pos += 4 + len;
    }
    let graph = load_segment(blocks[0])?;
    let tb: TraceBlock =
        serde_json::from_slice(blocks[1]).map_err(|e| DiagnosticsError::Json(e.to_string()))?;
    let rb: RaceBlock =
        serde_json::from_slice(blocks[2]).map_err(|e| DiagnosticsError::Json(e.to_string()))?;
    Ok(CoreDump {
        graph,
        cause: tb.cause,
        trace: tb.trace,
        accesses: tb.accesses,
        task_states: tb.task_states.into_iter().collect(),
        races: rb.report,
        race_error: rb.error,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DiagnosticsError {
    DiagnosticsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DiagnosticsError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Writes a core dump for a failed run and returns where it landed.
///
/// The file is written to a temporary sibling and renamed into place, so a
/// reader never sees a half-written dump. If that fails, one retry goes to
/// the system temp directory.
pub fn dump_core(
    g: &Hypergraph,
    trace: &ExecutionTrace,
    accesses: &[AccessEvent],
    cause: &str,
    path: &Path,
) -> Result<PathBuf, DiagnosticsError> {
    let bytes = encode_core(g, trace, accesses, cause);
    match write_atomic(path, &bytes) {
        Ok(()) => Ok(path.to_path_buf()),
        Err(first) => {
            let name = path
                .file_name()
                .map(|n| n.to_owned())
                .unwrap_or_else(|| "genesc.core".into());
            let fallback = std::env::temp_dir().join(name);
            log::warn!("{first}; retrying core dump at {}", fallback.display());
            write_atomic(&fallback, &bytes)?;
            Ok(fallback)
        }
    }
}

pub fn load_core(path: &Path) -> Result<CoreDump, DiagnosticsError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_core(&bytes)
}

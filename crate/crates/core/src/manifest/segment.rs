//! Binary and JSON interchange for hypergraphs.
//!
//! Binary layout, little endian throughout:
//!
//! ```text
//! magic "GSC1" | u16 version | u32 vertices | u32 edges | u32 hierarchy
//! | u32 payload_len | u32 crc32(payload) | payload
//! ```
//!
//! The payload is a run of records, each a `u32` length followed by that
//! many bytes: vertices first, then edges, then hierarchy entries.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::entity::{
    Direction, EntityId, KernelRef, Partitioning, PortSpec, RelationConstraint, StreamEntity,
    Strength,
};
use crate::graph::{EdgeKind, EdgeOrigin, GraphError, HyperEdge, Hypergraph};
use crate::value::{Cardinality, DataType};

pub const SEGMENT_MAGIC: &[u8; 4] = b"GSC1";
pub const SEGMENT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("not a graph segment (bad magic)")]
    BadMagic,
    #[error("segment version {0} is not supported")]
    VersionUnsupported(u16),
    #[error("segment header is truncated")]
    TruncatedHeader,
    #[error("record {index} is truncated")]
    TruncatedRecord { index: usize },
    #[error("checksum mismatch: header says {expected:#010x}, payload hashes to {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("malformed record {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("json: {0}")]
    Json(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("segment sizes fit in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn ids<'a>(&mut self, ids: impl ExactSizeIterator<Item = &'a EntityId>) {
        self.len(ids.len());
        for id in ids {
            self.str(id.as_str());
        }
    }
}

fn put_ports(w: &mut Writer, ports: &[PortSpec]) {
    w.len(ports.len());
    for p in ports {
        w.str(&p.name);
        w.u8(p.datatype.code());
        w.u8(match p.cardinality {
            Cardinality::Fixed => 0,
            Cardinality::Stream => 1,
        });
    }
}

fn vertex_record(v: &StreamEntity) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(v.id.as_str());
    w.str(&v.kernel.name);
    w.len(v.kernel.inputs);
    w.len(v.kernel.outputs);
    match v.partitioning {
        Partitioning::Single => {
            w.u8(0);
            w.u32(0);
        }
        Partitioning::Auto => {
            w.u8(1);
            w.u32(0);
        }
        Partitioning::Fixed(n) => {
            w.u8(2);
            w.u32(n);
        }
    }
    put_ports(&mut w, &v.inputs);
    put_ports(&mut w, &v.outputs);
    w.len(v.relations.len());
    for r in &v.relations {
        w.str(r.target.as_str());
        w.u8(r.direction as u8);
        w.u8(r.strength as u8);
    }
    w.0
}

fn edge_record(e: &HyperEdge) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u8(e.kind as u8);
    w.u8(e.strength as u8);
    match &e.origin {
        EdgeOrigin::Relation { owner, index } => {
            w.u8(0);
            w.str(owner.as_str());
            w.u32(*index);
        }
        EdgeOrigin::Stream { name } => {
            w.u8(1);
            w.str(name);
        }
    }
    w.ids(e.head.iter());
    w.ids(e.tail.iter());
    w.0
}

fn hierarchy_record(parent: &EntityId, children: &[EntityId]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(parent.as_str());
    w.ids(children.iter());
    w.0
}

/// Encodes `g` in the binary segment format.
pub fn emit_segment(g: &Hypergraph) -> Vec<u8> {
    let mut payload = Writer(Vec::new());
    let records = g
        .vertices()
        .values()
        .map(vertex_record)
        .chain(g.edges().iter().map(edge_record))
        .chain(g.hierarchy().iter().map(|(p, c)| hierarchy_record(p, c)));
    for r in records {
        payload.len(r.len());
        payload.0.extend_from_slice(&r);
    }
    let payload = payload.0;
    let mut out = Writer(Vec::with_capacity(HEADER_LEN + payload.len()));
    out.0.extend_from_slice(SEGMENT_MAGIC);
    out.0.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
    out.len(g.vertices().len());
    out.len(g.edges().len());
    out.len(g.hierarchy().len());
    out.len(payload.len());
    out.u32(crc32fast::hash(&payload));
    out.0.extend_from_slice(&payload);
    out.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    index: usize,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: impl Into<String>) -> SegmentError {
        SegmentError::Malformed {
            index: self.index,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SegmentError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| self.bad("field runs past the end of its record"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SegmentError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SegmentError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str(&mut self) -> Result<String, SegmentError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.bad("string is not utf-8"))
    }

    fn ids(&mut self) -> Result<Vec<EntityId>, SegmentError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.str().map(EntityId::new)).collect()
    }

    fn datatype(&mut self) -> Result<DataType, SegmentError> {
        let c = self.u8()?;
        DataType::from_code(c).ok_or_else(|| self.bad(format!("unknown datatype code {c}")))
    }

    fn ports(&mut self) -> Result<Vec<PortSpec>, SegmentError> {
        let n = self.u32()? as usize;
        (0..n)
            .map(|_| {
                let name = self.str()?;
                let datatype = self.datatype()?;
                let cardinality = match self.u8()? {
                    0 => Cardinality::Fixed,
                    1 => Cardinality::Stream,
                    c => return Err(self.bad(format!("unknown cardinality {c}"))),
                };
                Ok(PortSpec {
                    name,
                    datatype,
                    cardinality,
                })
            })
            .collect()
    }

    fn strength(&mut self) -> Result<Strength, SegmentError> {
        match self.u8()? {
            0 => Ok(Strength::Hard),
            1 => Ok(Strength::Soft),
            c => Err(self.bad(format!("unknown strength {c}"))),
        }
    }

    fn finish(&self) -> Result<(), SegmentError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(self.bad("trailing bytes in record"))
        }
    }
}

fn read_vertex(r: &mut Reader<'_>) -> Result<StreamEntity, SegmentError> {
    let id = EntityId::new(r.str()?);
    let name = r.str()?;
    let kin = r.u32()? as usize;
    let kout = r.u32()? as usize;
    let partitioning = match (r.u8()?, r.u32()?) {
        (0, _) => Partitioning::Single,
        (1, _) => Partitioning::Auto,
        (2, n) => Partitioning::Fixed(n),
        (t, _) => return Err(r.bad(format!("unknown partitioning tag {t}"))),
    };
    let inputs = r.ports()?;
    let outputs = r.ports()?;
    let n = r.u32()? as usize;
    let relations = (0..n)
        .map(|_| {
            let target = EntityId::new(r.str()?);
            let direction = match r.u8()? {
                0 => Direction::Before,
                1 => Direction::After,
                c => return Err(r.bad(format!("unknown direction {c}"))),
            };
            Ok(RelationConstraint {
                target,
                direction,
                strength: r.strength()?,
            })
        })
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(StreamEntity {
        id,
        kernel: KernelRef {
            name,
            inputs: kin,
            outputs: kout,
        },
        inputs,
        outputs,
        relations,
        partitioning,
        children: Vec::new(),
    })
}

fn read_edge(r: &mut Reader<'_>) -> Result<HyperEdge, SegmentError> {
    let kind = match r.u8()? {
        0 => EdgeKind::Dataflow,
        1 => EdgeKind::Controlflow,
        c => return Err(r.bad(format!("unknown edge kind {c}"))),
    };
    let strength = r.strength()?;
    let origin = match r.u8()? {
        0 => EdgeOrigin::Relation {
            owner: EntityId::new(r.str()?),
            index: r.u32()?,
        },
        1 => EdgeOrigin::Stream { name: r.str()? },
        c => return Err(r.bad(format!("unknown edge origin {c}"))),
    };
    let head = r.ids()?;
    let tail = r.ids()?;
    r.finish()?;
    Ok(HyperEdge {
        kind,
        origin,
        strength,
        head,
        tail,
    })
}

/// Decodes a binary segment.
///
/// Checks run in a fixed order: magic, version, header length, record
/// framing (so a cut-off file reports the first truncated record), and only
/// then the payload checksum.
pub fn load_segment(bytes: &[u8]) -> Result<Hypergraph, SegmentError> {
    if bytes.len() < 4 || &bytes[..4] != SEGMENT_MAGIC {
        return Err(SegmentError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(SegmentError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SEGMENT_VERSION {
        return Err(SegmentError::VersionUnsupported(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(SegmentError::TruncatedHeader);
    }
    let word = |i: usize| {
        let at = 6 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let (nv, ne, nh, declared_len) = (word(0), word(1), word(2), word(3));
    let crc = word(4) as u32;
    let payload = &bytes[HEADER_LEN..];

    let total = nv + ne + nh;
    let mut records = Vec::with_capacity(total.min(1 << 16));
    let mut pos = 0usize;
    for index in 0..total {
        let len = payload
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or(SegmentError::TruncatedRecord { index })?;
        let body = payload
            .get(pos + 4..pos + 4 + len)
            .ok_or(SegmentError::TruncatedRecord { index })?;
        records.push(body);
        pos += 4 + len;
    }
    if pos != payload.len() || declared_len != payload.len() {
        return Err(SegmentError::Malformed {
            index: total,
            reason: format!(
                "payload is {} bytes, header declares {declared_len}, records use {pos}",
                payload.len()
            ),
        });
    }
    let actual = crc32fast::hash(payload);
    if actual != crc {
        return Err(SegmentError::ChecksumMismatch {
            expected: crc,
            actual,
        });
    }

    let reader = |index: usize| Reader {
        buf: records[index],
        pos: 0,
        index,
    };
    let mut vertices = BTreeMap::new();
    for i in 0..nv {
        let v = read_vertex(&mut reader(i))?;
        if vertices.insert(v.id.clone(), v).is_some() {
            return Err(SegmentError::Malformed {
                index: i,
                reason: "duplicate vertex".into(),
            });
        }
    }
    let edges = (nv..nv + ne)
        .map(|i| read_edge(&mut reader(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut hierarchy = BTreeMap::new();
    for i in nv + ne..total {
        let mut r = reader(i);
        let parent = EntityId::new(r.str()?);
        let children = r.ids()?;
        r.finish()?;
        hierarchy.insert(parent, children);
    }
    Ok(Hypergraph::from_parts(vertices, edges, hierarchy)?)
}

/// Pretty-printed JSON form of a graph.
pub fn emit_segment_json(g: &Hypergraph) -> String {
    serde_json::to_string_pretty(g).expect("graphs serialize to json")
}

pub fn load_segment_json(text: &str) -> Result<Hypergraph, SegmentError> {
    let raw: Hypergraph =
        serde_json::from_str(text).map_err(|e| SegmentError::Json(e.to_string()))?;
    let (v, e, h) = raw.into_parts();
    Ok(Hypergraph::from_parts(v, e, h)?)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes binary, or JSON when the path ends in `.json`.
pub fn write_segment(g: &Hypergraph, path: &Path) -> Result<(), SegmentError> {
    let bytes = if is_json(path) {
        emit_segment_json(g).into_bytes()
    } else {
        emit_segment(g)
    };
    std::fs::write(path, bytes).map_err(|e| SegmentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_segment(path: &Path) -> Result<Hypergraph, SegmentError> {
    let bytes = std::fs::read(path).map_err(|e| SegmentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if is_json(path) {
        let text = String::from_utf8(bytes).map_err(|e| SegmentError::Json(e.to_string()))?;
        load_segment_json(&text)
    } else {
        load_segment(&bytes)
    }
}

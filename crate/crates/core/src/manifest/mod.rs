//! The textual program manifest, and the binary/JSON graph segments.
//!
//! ```text
//! # comments run to the end of the line
//! entity scale {
//!     input: stream<scalars> xs;
//!     output: scalars ys;
//!     kernel: square;
//!     after: [(load, hard)];
//!     partitions: auto;
//! }
//! entity pipeline { children: [load, scale]; }
//! ```
//!
//! Fields may appear in any order. `input` and `output` repeat, one port
//! each; every other field appears at most once. Entities with `children`
//! are composites and take no kernel. Entities that are nobody's child are
//! roots.

mod segment;

pub use segment::{
    emit_segment, emit_segment_json, load_segment, load_segment_json, read_segment,
    write_segment, SegmentError, SEGMENT_MAGIC, SEGMENT_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::entity::{
    validate_leaf, Direction, EntityError, EntityId, KernelRef, Partitioning, PortSpec,
    RelationConstraint, StreamEntity, Strength,
};
use crate::graph::{build_forest, GraphError, Hypergraph};
use crate::kernel::KernelRegistry;
use crate::value::{Cardinality, DataType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("{line}:{col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: unresolved {what} `{name}`")]
    UnresolvedName {
        line: usize,
        col: usize,
        what: &'static str,
        name: String,
    },
    #[error("{line}:{col}: `{name}` is declared more than once")]
    DuplicateDeclaration {
        line: usize,
        col: usize,
        name: String,
    },
    #[error("entity `{0}` is reachable through its own children or has two parents")]
    BadHierarchy(EntityId),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '|' | '@')
}

fn tokenize(text: &str) -> Result<Vec<Token>, ManifestError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
            } else if "{}[](),;:<>".contains(c) {
                out.push(Token {
                    tok: Tok::Punct(c),
                    line: ln + 1,
                    col,
                });
                i += 1;
            } else if is_word_char(c) {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    line: ln + 1,
                    col,
                });
            } else {
                return Err(ManifestError::SyntaxError {
                    line: ln + 1,
                    col,
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(out)
}

/// A name together with where it was written.
#[derive(Debug, Clone)]
struct Spanned {
    name: String,
    line: usize,
    col: usize,
}

#[derive(Debug, Default)]
struct Decl {
    at: Option<Spanned>,
    kernel: Option<Spanned>,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    relations: Vec<(Spanned, Direction, Strength)>,
    children: Option<Vec<Spanned>>,
    partitioning: Option<Partitioning>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.eof, |t| (t.line, t.col))
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ManifestError> {
        let (line, col) = self.here();
        Err(ManifestError::SyntaxError {
            line,
            col,
            message: message.into(),
        })
    }

    fn word(&mut self, what: &str) -> Result<Spanned, ManifestError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Word(w),
                line,
                col,
            }) => {
                let s = Spanned {
                    name: w.clone(),
                    line: *line,
                    col: *col,
                };
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(format!("expected {what}")),
        }
    }

    fn is_punct(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Punct(p), .. }) if *p == c)
    }

    fn punct(&mut self, c: char) -> Result<(), ManifestError> {
        if self.is_punct(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected `{c}`"))
        }
    }

    /// `[ item (, item)* ]`, possibly empty.
    fn list<T>(
        &mut self,
        mut item: impl FnMut(&mut Self) -> Result<T, ManifestError>,
    ) -> Result<Vec<T>, ManifestError> {
        self.punct('[')?;
        let mut out = Vec::new();
        if self.is_punct(']') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.is_punct(',') {
                self.pos += 1;
            } else {
                self.punct(']')?;
                return Ok(out);
            }
        }
    }

    fn port(&mut self) -> Result<PortSpec, ManifestError> {
        let head = self.word("a port type")?;
        let (datatype, cardinality, at) = if head.name == "stream" {
            self.punct('<')?;
            let inner = self.word("a datatype")?;
            self.punct('>')?;
            (inner.name.clone(), Cardinality::Stream, inner)
        } else {
            (head.name.clone(), Cardinality::Fixed, head)
        };
        let datatype: DataType = datatype.parse().map_err(|m: String| ManifestError::SyntaxError {
            line: at.line,
            col: at.col,
            message: m,
        })?;
        let name = self.word("a port name")?;
        Ok(PortSpec {
            name: name.name,
            datatype,
            cardinality,
        })
    }

    fn relation(&mut self, direction: Direction) -> Result<(Spanned, Direction, Strength), ManifestError> {
        self.punct('(')?;
        let target = self.word("an entity name")?;
        self.punct(',')?;
        let s = self.word("`hard` or `soft`")?;
        let strength = match s.name.as_str() {
            "hard" => Strength::Hard,
            "soft" => Strength::Soft,
            _ => {
                return Err(ManifestError::SyntaxError {
                    line: s.line,
                    col: s.col,
                    message: format!("expected `hard` or `soft`, found `{}`", s.name),
                })
            }
        };
        self.punct(')')?;
        Ok((target, direction, strength))
    }

    fn entity(&mut self) -> Result<(Spanned, Decl), ManifestError> {
        let kw = self.word("`entity`")?;
        if kw.name != "entity" {
            return Err(ManifestError::SyntaxError {
                line: kw.line,
                col: kw.col,
                message: format!("expected `entity`, found `{}`", kw.name),
            });
        }
        let id = self.word("an entity name")?;
        self.punct('{')?;
        let mut d = Decl {
            at: Some(id.clone()),
            ..Decl::default()
        };
        let mut seen = BTreeSet::new();
        while !self.is_punct('}') {
            let field = self.word("a field name")?;
            self.punct(':')?;
            let repeatable = matches!(field.name.as_str(), "input" | "output" | "before" | "after");
            if !repeatable && !seen.insert(field.name.clone()) {
                return Err(ManifestError::DuplicateDeclaration {
                    line: field.line,
                    col: field.col,
                    name: format!("{}.{}", id.name, field.name),
                });
            }
            match field.name.as_str() {
                "input" => d.inputs.push(self.port()?),
                "output" => d.outputs.push(self.port()?),
                "kernel" => d.kernel = Some(self.word("a kernel name")?),
                "before" => {
                    let rs = self.list(|p| p.relation(Direction::Before))?;
                    d.relations.extend(rs);
                }
                "after" => {
                    let rs = self.list(|p| p.relation(Direction::After))?;
                    d.relations.extend(rs);
                }
                "children" => d.children = Some(self.list(|p| p.word("an entity name"))?),
                "partitions" => {
                    let w = self.word("`auto` or a count")?;
                    d.partitioning = Some(match w.name.as_str() {
                        "auto" => Partitioning::Auto,
                        "single" => Partitioning::Single,
                        n => match n.parse::<u32>() {
                            Ok(n) if n > 0 => Partitioning::Fixed(n),
                            _ => {
                                return Err(ManifestError::SyntaxError {
                                    line: w.line,
                                    col: w.col,
                                    message: format!("bad partition count `{n}`"),
                                })
                            }
                        },
                    });
                }
                other => {
                    return Err(ManifestError::SyntaxError {
                        line: field.line,
                        col: field.col,
                        message: format!("unknown field `{other}`"),
                    })
                }
            }
            self.punct(';')?;
        }
        self.punct('}')?;
        Ok((id, d))
    }
}

/// Parses a manifest into its root entities, children nested in place.
///
/// Kernel names resolve against `registry`; relation targets and children
/// resolve against the entities declared anywhere in the text.
pub fn parse_manifest(
    text: &str,
    registry: &KernelRegistry,
) -> Result<Vec<StreamEntity>, ManifestError> {
    let toks = tokenize(text)?;
    let eof = (text.lines().count().max(1), 1);
    let mut p = Parser { toks, pos: 0, eof };
    let mut decls: BTreeMap<String, Decl> = BTreeMap::new();
    let mut order = Vec::new();
    while p.peek().is_some() {
        let (id, d) = p.entity()?;
        if decls.contains_key(&id.name) {
            return Err(ManifestError::DuplicateDeclaration {
                line: id.line,
                col: id.col,
                name: id.name,
            });
        }
        order.push(id.name.clone());
        decls.insert(id.name, d);
    }

    let unresolved = |s: &Spanned, what| ManifestError::UnresolvedName {
        line: s.line,
        col: s.col,
        what,
        name: s.name.clone(),
    };
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    for (id, d) in &decls {
        for (t, _, _) in &d.relations {
            if !decls.contains_key(&t.name) {
                return Err(unresolved(t, "entity"));
            }
        }
        for c in d.children.iter().flatten() {
            if !decls.contains_key(&c.name) {
                return Err(unresolved(c, "entity"));
            }
            if parent.insert(&c.name, id).is_some() || c.name == *id {
                return Err(ManifestError::BadHierarchy(c.name.as_str().into()));
            }
        }
        match (&d.kernel, &d.children) {
            (Some(k), _) if !registry.contains(&k.name) => return Err(unresolved(k, "kernel")),
            (Some(k), Some(_)) => {
                return Err(ManifestError::SyntaxError {
                    line: k.line,
                    col: k.col,
                    message: format!("composite `{id}` cannot have a kernel"),
                })
            }
            (None, None) => {
                let at = d.at.as_ref().expect("declarations record their position");
                return Err(ManifestError::SyntaxError {
                    line: at.line,
                    col: at.col,
                    message: format!("entity `{id}` needs a kernel or children"),
                });
            }
            _ => {}
        }
    }

    fn build(
        id: &str,
        decls: &BTreeMap<String, Decl>,
        registry: &KernelRegistry,
        depth: usize,
    ) -> Result<StreamEntity, ManifestError> {
        if depth > decls.len() {
            return Err(ManifestError::BadHierarchy(id.into()));
        }
        let d = &decls[id];
        let kernel = match &d.kernel {
            Some(k) => registry
                .kernel_ref(&k.name)
                .expect("kernel names were resolved"),
            None => KernelRef::composite(d.inputs.len(), d.outputs.len()),
        };
        let children = d
            .children
            .iter()
            .flatten()
            .map(|c| build(&c.name, decls, registry, depth + 1))
            .collect::<Result<Vec<_>, _>>()?;
        let e = StreamEntity {
            id: id.into(),
            kernel,
            inputs: d.inputs.clone(),
            outputs: d.outputs.clone(),
            relations: d
                .relations
                .iter()
                .map(|(t, direction, strength)| RelationConstraint {
                    target: t.name.as_str().into(),
                    direction: *direction,
                    strength: *strength,
                })
                .collect(),
            partitioning: d.partitioning.unwrap_or_default(),
            children,
        };
        validate_leaf(&e)?;
        Ok(e)
    }

    let roots: Vec<&String> = order
        .iter()
        .filter(|id| !parent.contains_key(id.as_str()))
        .collect();
    if roots.is_empty() && !order.is_empty() {
        return Err(ManifestError::BadHierarchy(order[0].as_str().into()));
    }
    roots
        .into_iter()
        .map(|id| build(id, &decls, registry, 0))
        .collect()
}

/// Parses a manifest and builds the graph of all its roots.
pub fn load_manifest(text: &str, registry: &KernelRegistry) -> Result<Hypergraph, ManifestError> {
    let roots = parse_manifest(text, registry)?;
    Ok(build_forest(&roots)?)
}

fn port_text(p: &PortSpec) -> String {
    match p.cardinality {
        Cardinality::Fixed => format!("{} {}", p.datatype, p.name),
        Cardinality::Stream => format!("stream<{}> {}", p.datatype, p.name),
    }
}

/// Renders entities back into manifest text, children after their parent.
pub fn to_manifest(roots: &[StreamEntity]) -> String {
    let mut out = String::new();
    for e in roots.iter().flat_map(|r| r.walk()) {
        let _ = writeln!(out, "entity {} {{", e.id);
        for p in &e.inputs {
            let _ = writeln!(out, "    input: {};", port_text(p));
        }
        for p in &e.outputs {
            let _ = writeln!(out, "    output: {};", port_text(p));
        }
        if !e.is_composite() {
            let _ = writeln!(out, "    kernel: {};", e.kernel.name);
        }
        for r in &e.relations {
            let field = match r.direction {
                Direction::Before => "before",
                Direction::After => "after",
            };
            let _ = writeln!(out, "    {field}: [({}, {})];", r.target, r.strength);
        }
        match e.partitioning {
            Partitioning::Single => {}
            Partitioning::Auto => out.push_str("    partitions: auto;\n"),
            Partitioning::Fixed(n) => {
                let _ = writeln!(out, "    partitions: {n};");
            }
        }
        if e.is_composite() {
            let ids: Vec<&str> = e.children.iter().map(|c| c.id.as_str()).collect();
            let _ = writeln!(out, "    children: [{}];", ids.join(", "));
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;

    fn registry() -> KernelRegistry {
        let mut r = KernelRegistry::new();
        r.register_fn("src", 0, 1, |_| Ok(vec![Value::Scalars(vec![1.0])]))
            .unwrap();
        r.register_fn("square", 1, 1, |c| Ok(vec![c.block(0)])).unwrap();
        r
    }

    const TEXT: &str = "\
# two stages
entity load {
    output: stream<scalars> xs;
    kernel: src;
}
entity scale {
    input: stream<scalars> xs;   # partitioned
    output: scalars ys;
    kernel: square;
    after: [(load, hard)];
    partitions: 4;
}
entity pipeline { children: [load, scale]; }
";

    #[test]
    fn parses_nested_roots() {
        let roots = parse_manifest(TEXT, &registry()).unwrap();
        assert_eq!(roots.len(), 1);
        let root = &roots[0];
        assert!(root.is_composite());
        assert_eq!(root.children.len(), 2);
        let scale = &root.children[1];
        assert_eq!(scale.partitioning, Partitioning::Fixed(4));
        assert_eq!(scale.inputs[0].cardinality, Cardinality::Stream);
        assert_eq!(scale.relations, vec![RelationConstraint::after("load", Strength::Hard)]);
    }

    #[test]
    fn round_trips_through_text() {
        let roots = parse_manifest(TEXT, &registry()).unwrap();
        let again = parse_manifest(&to_manifest(&roots), &registry()).unwrap();
        assert_eq!(roots, again);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_manifest("entity a {\n  kernel src;\n}", &registry()).unwrap_err();
        assert_eq!(
            err,
            ManifestError::SyntaxError {
                line: 2,
                col: 10,
                message: "expected `:`".into()
            }
        );
    }

    #[test]
    fn unresolved_names() {
        let err = parse_manifest("entity a { kernel: nope; }", &registry()).unwrap_err();
        assert!(matches!(err, ManifestError::UnresolvedName { what: "kernel", .. }));
        let err = parse_manifest("entity a { kernel: src; output: scalars x; before: [(b, hard)]; }", &registry())
            .unwrap_err();
        assert!(matches!(err, ManifestError::UnresolvedName { what: "entity", .. }));
    }

    #[test]
    fn duplicates_are_rejected() {
        let text = "entity a { kernel: src; output: scalars x; }\nentity a { kernel: src; output: scalars x; }";
        assert!(matches!(
            parse_manifest(text, &registry()),
            Err(ManifestError::DuplicateDeclaration { line: 2, .. })
        ));
        let text = "entity a { kernel: src; kernel: src; output: scalars x; }";
        assert!(matches!(
            parse_manifest(text, &registry()),
            Err(ManifestError::DuplicateDeclaration { .. })
        ));
    }

    #[test]
    fn arity_is_checked_against_the_kernel() {
        let err = parse_manifest("entity a { kernel: src; }", &registry()).unwrap_err();
        assert!(matches!(err, ManifestError::Entity(EntityError::ArityMismatch { .. })));
    }
}

//! Stream data: the closed registry of port datatypes and the payloads that
//! flow between entities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Port datatype tag. The set is closed; kernels are native code and the
/// runtime only needs enough type information to route and partition data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Unit,
    Scalar,
    Scalars,
    Vec3s,
    Bytes,
    Record,
}

impl DataType {
    pub const ALL: [DataType; 6] = [
        DataType::Unit,
        DataType::Scalar,
        DataType::Scalars,
        DataType::Vec3s,
        DataType::Bytes,
        DataType::Record,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DataType::Unit => "unit",
            DataType::Scalar => "scalar",
            DataType::Scalars => "scalars",
            DataType::Vec3s => "vec3s",
            DataType::Bytes => "bytes",
            DataType::Record => "record",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Whether values of this type can be split into element blocks and
    /// concatenated back.
    pub fn is_sequence(self) -> bool {
        matches!(self, DataType::Scalars | DataType::Vec3s | DataType::Bytes)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataType::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown datatype `{s}`"))
    }
}

/// Whether a port carries one fixed datum or a partitionable stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    Fixed,
    Stream,
}

/// A payload on a stream or in a guarded cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Unit,
    Scalar(f64),
    Scalars(Vec<f64>),
    Vec3s(Vec<[f64; 3]>),
    Bytes(Vec<u8>),
    Record(BTreeMap<String, Value>),
}

impl Value {
    pub fn datatype(&self) -> DataType {
        match self {
            Value::Unit => DataType::Unit,
            Value::Scalar(_) => DataType::Scalar,
            Value::Scalars(_) => DataType::Scalars,
            Value::Vec3s(_) => DataType::Vec3s,
            Value::Bytes(_) => DataType::Bytes,
            Value::Record(_) => DataType::Record,
        }
    }

    /// Number of partitionable elements. Non-sequence values count as one.
    pub fn element_count(&self) -> usize {
        match self {
            Value::Scalars(v) => v.len(),
            Value::Vec3s(v) => v.len(),
            Value::Bytes(v) => v.len(),
            _ => 1,
        }
    }

    /// Copies out the elements in `range`. Non-sequence values are returned whole.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Value {
        match self {
            Value::Scalars(v) => Value::Scalars(v[range].to_vec()),
            Value::Vec3s(v) => Value::Vec3s(v[range].to_vec()),
            Value::Bytes(v) => Value::Bytes(v[range].to_vec()),
            other => other.clone(),
        }
    }

    /// Reassembles per-partition outputs in partition order.
    ///
    /// Sequence types are concatenated. Any other type is only accepted when
    /// there is exactly one part, or when every part is `Unit`.
    pub fn concat_parts(parts: Vec<Value>) -> Result<Value, String> {
        let mut iter = parts.into_iter();
        let Some(first) = iter.next() else {
            return Err("no partition outputs to reassemble".into());
        };
        let ty = first.datatype();
        let rest: Vec<Value> = iter.collect();
        if rest.is_empty() {
            return Ok(first);
        }
        if let Some(bad) = rest.iter().find(|v| v.datatype() != ty) {
            return Err(format!(
                "partition outputs disagree on type: {ty} vs {}",
                bad.datatype()
            ));
        }
        Ok(match first {
            Value::Unit => Value::Unit,
            Value::Scalars(mut acc) => {
                for v in rest {
                    if let Value::Scalars(p) = v {
                        acc.extend(p);
                    }
                }
                Value::Scalars(acc)
            }
            Value::Vec3s(mut acc) => {
                for v in rest {
                    if let Value::Vec3s(p) = v {
                        acc.extend(p);
                    }
                }
                Value::Vec3s(acc)
            }
            Value::Bytes(mut acc) => {
                for v in rest {
                    if let Value::Bytes(p) = v {
                        acc.extend(p);
                    }
                }
                Value::Bytes(acc)
            }
            _ => return Err(format!("{ty} outputs cannot be reassembled from partitions")),
        })
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_scalars(&self) -> Option<&[f64]> {
        match self {
            Value::Scalars(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_vec3s(&self) -> Option<&[[f64; 3]]> {
        match self {
            Value::Vec3s(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(v) => Some(v),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Scalar(x)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Scalars(v)
    }
}

impl From<Vec<[f64; 3]>> for Value {
    fn from(v: Vec<[f64; 3]>) -> Self {
        Value::Vec3s(v)
    }
}

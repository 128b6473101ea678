//! Tasks: one entity instance bound to one block of its stream data.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::{EntityId, StreamEntity};
use crate::value::{Cardinality, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub entity: EntityId,
    pub instance: u32,
}

impl TaskId {
    pub fn new(entity: impl Into<EntityId>, instance: u32) -> Self {
        TaskId {
            entity: entity.into(),
            instance,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.entity, self.instance)
    }
}

/// Contiguous block of the partitioned input owned by one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub index: u32,
    pub count: u32,
    pub range: Range<usize>,
}

impl Partition {
    pub fn whole(len: usize) -> Self {
        Partition {
            index: 0,
            count: 1,
            range: 0..len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Ready,
    Running,
    Done,
    Failed,
}

impl TaskState {
    /// Legal lifecycle steps: Pending → Ready → Running → {Done, Failed}.
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Ready) | (Ready, Running) | (Running, Done) | (Running, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub partition: Partition,
    pub state: TaskState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("entity `{0}` has no stream-cardinality input to partition")]
    NoStreamInput(EntityId),
    #[error("partition count must be at least 1")]
    ZeroPartitions,
    #[error("entity `{entity}` expects {expected} inputs, got {got}")]
    InputCount {
        entity: EntityId,
        expected: usize,
        got: usize,
    },
}

/// Block sizes for `len` elements over `n` parts: the first `len % n` blocks
/// get one extra element.
pub fn block_ranges(len: usize, n: usize) -> Vec<Range<usize>> {
    let base = len / n;
    let extra = len % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Expands `e` into `n` data-parallel tasks over contiguous blocks of its
/// first stream input.
///
/// When `n` exceeds the element count it is clamped (to at least one task)
/// and a warning is logged.
pub fn partition_map(e: &StreamEntity, data: &[Value], n: usize) -> Result<Vec<Task>, PartitionError> {
    if n == 0 {
        return Err(PartitionError::ZeroPartitions);
    }
    if data.len() != e.inputs.len() {
        return Err(PartitionError::InputCount {
            entity: e.id.clone(),
            expected: e.inputs.len(),
            got: data.len(),
        });
    }
    let pos = e
        .inputs
        .iter()
        .position(|p| p.cardinality == Cardinality::Stream)
        .ok_or_else(|| PartitionError::NoStreamInput(e.id.clone()))?;
    let len = data[pos].element_count();
    let mut n = n;
    if n > len {
        log::warn!(
            "entity `{}`: {n} partitions requested for {len} elements; clamping",
            e.id
        );
        n = len.max(1);
    }
    Ok(block_ranges(len, n)
        .into_iter()
        .enumerate()
        .map(|(i, range)| Task {
            id: TaskId::new(e.id.clone(), i as u32),
            partition: Partition {
                index: i as u32,
                count: n as u32,
                range,
            },
            state: TaskState::Pending,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{KernelRef, Partitioning, PortSpec};
    use crate::value::DataType;

    fn mapper() -> StreamEntity {
        StreamEntity {
            id: "m".into(),
            kernel: KernelRef::new("k", 1, 1),
            inputs: vec![PortSpec::stream("xs", DataType::Scalars)],
            outputs: vec![PortSpec::stream("ys", DataType::Scalars)],
            relations: vec![],
            partitioning: Partitioning::Single,
            children: vec![],
        }
    }

    fn sizes(tasks: &[Task]) -> Vec<usize> {
        tasks.iter().map(|t| t.partition.range.len()).collect()
    }

    #[test]
    fn ten_over_three() {
        let data = [Value::Scalars(vec![0.0; 10])];
        let tasks = partition_map(&mapper(), &data, 3).unwrap();
        assert_eq!(sizes(&tasks), vec![4, 3, 3]);
        assert_eq!(tasks[1].partition.range, 4..7);
        assert!(tasks.iter().all(|t| t.state == TaskState::Pending));
    }

    #[test]
    fn single_partition_covers_everything() {
        let data = [Value::Scalars(vec![1.0; 7])];
        let tasks = partition_map(&mapper(), &data, 1).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].partition.range, 0..7);
    }

    #[test]
    fn more_partitions_than_elements_is_clamped() {
        let data = [Value::Scalars(vec![1.0; 2])];
        assert_eq!(sizes(&partition_map(&mapper(), &data, 5).unwrap()), vec![1, 1]);
        let empty = [Value::Scalars(vec![])];
        assert_eq!(sizes(&partition_map(&mapper(), &empty, 3).unwrap()), vec![0]);
    }

    #[test]
    fn errors() {
        let data = [Value::Scalars(vec![1.0])];
        assert_eq!(
            partition_map(&mapper(), &data, 0).unwrap_err(),
            PartitionError::ZeroPartitions
        );
        let mut fixed = mapper();
        fixed.inputs[0] = PortSpec::fixed("xs", DataType::Scalars);
        assert!(matches!(
            partition_map(&fixed, &data, 2),
            Err(PartitionError::NoStreamInput(_))
        ));
    }

    #[test]
    fn lifecycle_steps() {
        use TaskState::*;
        assert!(Pending.can_become(Ready));
        assert!(Running.can_become(Failed));
        assert!(!Pending.can_become(Running));
        assert!(!Done.can_become(Running));
    }

    proptest::proptest! {
        #[test]
        fn blocks_are_contiguous_and_balanced(len in 0usize..500, n in 1usize..40) {
            let r = block_ranges(len, n);
            proptest::prop_assert_eq!(r.len(), n);
            proptest::prop_assert_eq!(r.first().unwrap().start, 0);
            proptest::prop_assert_eq!(r.last().unwrap().end, len);
            for w in r.windows(2) {
                proptest::prop_assert_eq!(w[0].end, w[1].start);
            }
            let max = r.iter().map(|x| x.len()).max().unwrap();
            let min = r.iter().map(|x| x.len()).min().unwrap();
            proptest::prop_assert!(max - min <= 1);
        }
    }
}

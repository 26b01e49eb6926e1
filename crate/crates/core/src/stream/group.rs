use serde::{Deserialize, Serialize};

use super::StreamError;

/// Replica set and its partition ownership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorGroup {
    pub n_partitions: u32,
    pub replicas: usize,
    /// `assignment[p]` is the replica owning partition `p`.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMove {
    pub partition: u32,
    pub from: usize,
    pub to: usize,
}

/// Partitions whose state must be shipped to a new owner before it consumes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoffPlan {
    pub moves: Vec<PartitionMove>,
}

impl OperatorGroup {
    /// Round-robin assignment of `n_partitions` over `replicas`.
    pub fn new(n_partitions: u32, replicas: usize) -> Result<Self, StreamError> {
        if n_partitions == 0 {
            return Err(StreamError::InvalidGroup("at least one partition is required".into()));
        }
        if replicas == 0 || replicas > n_partitions as usize {
            return Err(StreamError::InvalidGroup(format!(
                "replica count {replicas} must be in 1..={n_partitions}"
            )));
        }
        Ok(OperatorGroup {
            n_partitions,
            replicas,
            assignment: (0..n_partitions as usize).map(|p| p % replicas).collect(),
        })
    }

    pub fn owner(&self, partition: u32) -> usize {
        self.assignment[partition as usize]
    }

    pub fn partitions_of(&self, replica: usize) -> Vec<u32> {
        (0..self.n_partitions).filter(|&p| self.owner(p) == replica).collect()
    }

    pub fn rebalance(&self, new_replicas: usize) -> Result<(OperatorGroup, HandoffPlan), StreamError> {
        let next = OperatorGroup::new(self.n_partitions, new_replicas)?;
        let moves = (0..self.n_partitions)
            .filter(|&p| self.owner(p) != next.owner(p))
            .map(|p| PartitionMove {
                partition: p,
                from: self.owner(p),
                to: next.owner(p),
            })
            .collect();
        Ok((next, HandoffPlan { moves }))
    }
}

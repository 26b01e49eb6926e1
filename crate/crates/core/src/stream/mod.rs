//! MMSI-keyed partitioned log and replicated operator groups.

mod group;
pub mod log;
mod runtime;

use thiserror::Error;

use crate::domain::Mmsi;
use crate::normalcy::NormalcyError;
use crate::preprocess::PreprocessError;

pub use group::{HandoffPlan, OperatorGroup, PartitionMove};
pub use log::{LogError, PartitionedLog, Record};
pub use runtime::{
    dedup_alerts, drain_outputs, run_group, Alert, ClosedSummary, GroupOutput, GroupRunner, OperatorSettings,
    RunOutcome, RunStats, RunUntil, TraceEntry,
};

pub const DEFAULT_PARTITIONS: u32 = 16;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid operator group: {0}")]
    InvalidGroup(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Detection(#[from] NormalcyError),
    #[error(transparent)]
    Handoff(#[from] PreprocessError),
    #[error("output sink disconnected")]
    SinkClosed,
    #[error("a replica thread panicked")]
    ReplicaPanicked,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Partition of a vessel: FNV-1a 64 of its MMSI as 8 big-endian bytes, modulo the partition count.
pub fn partition_of(mmsi: Mmsi, n_partitions: u32) -> u32 {
    assert!(n_partitions >= 1, "n_partitions must be >= 1");
    (fnv1a64(&log::mmsi_key(mmsi)) % n_partitions as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn single_partition() {
        for m in [1, 227006760, 999_999_999] {
            assert_eq!(partition_of(m, 1), 0);
        }
    }

    #[test]
    fn stable_values() {
        // computed independently; catches any change of hash or key encoding
        let got: Vec<u32> = [227006760u32, 1, 538004321]
            .iter()
            .map(|&m| partition_of(m, 16))
            .collect();
        assert_eq!(got, vec![12, 2, 6]);
    }

    #[test]
    fn load_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut load = [0u32; 16];
        for _ in 0..100_000 {
            load[partition_of(rng.random_range(1..=999_999_999), 16) as usize] += 1;
        }
        let (max, min) = (*load.iter().max().unwrap(), *load.iter().min().unwrap());
        assert!(max as f64 / min as f64 <= 1.2, "{load:?}");
    }
}

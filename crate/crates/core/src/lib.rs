//! Streaming AIS anomaly detection: track building, cell-local a-contrario
//! normalcy detection and MMSI-partitioned operator replication.

pub mod bench;
pub mod domain;
pub mod ingest;
pub mod normalcy;
pub mod pipeline;
pub mod preprocess;
pub mod stream;

//! Append-only partitioned log with optional file-backed partitions.
//!
//! Partition file layout (all integers little-endian): magic `GTPL`, version u16,
//! then records of `u32 length | u64 offset | u32 key length | key | payload`,
//! where `length` counts the bytes following it.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, RwLock};
use std::time::Duration;

use thiserror::Error;

use super::partition_of;
use crate::domain::{AisMessage, Mmsi, Source};

pub const LOG_MAGIC: &[u8; 4] = b"GTPL";
pub const LOG_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log is closed")]
    Closed,
    #[error("partition {0} does not exist")]
    NoSuchPartition(u32),
    #[error("not a partition file (bad magic)")]
    BadMagic,
    #[error("partition format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("partition file truncated at byte {0}")]
    Truncated(usize),
    #[error("record offset {found} where {expected} was expected")]
    OffsetOutOfOrder { expected: u64, found: u64 },
    #[error("payload is not an encoded message: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub offset: u64,
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn message(&self) -> Result<AisMessage, LogError> {
        decode_message(&self.payload)
    }
}

pub const MESSAGE_LEN: usize = 4 + 8 + 8 * 4 + 1;

/// Fixed-width binary form of a message, used as the log payload.
pub fn encode_message(m: &AisMessage) -> Vec<u8> {
    let mut b = Vec::with_capacity(MESSAGE_LEN);
    b.extend_from_slice(&m.mmsi.to_le_bytes());
    b.extend_from_slice(&m.timestamp.to_le_bytes());
    for v in [m.lat, m.lon, m.sog, m.cog] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.push(m.source.code());
    b
}

pub fn decode_message(b: &[u8]) -> Result<AisMessage, LogError> {
    if b.len() != MESSAGE_LEN {
        return Err(LogError::BadPayload(format!("{} bytes", b.len())));
    }
    let f = |i: usize| f64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
    let source = Source::from_code(b[44]).ok_or_else(|| LogError::BadPayload(format!("source code {}", b[44])))?;
    Ok(AisMessage {
        mmsi: u32::from_le_bytes(b[0..4].try_into().expect("4 bytes")),
        timestamp: i64::from_le_bytes(b[4..12].try_into().expect("8 bytes")),
        lat: f(12),
        lon: f(20),
        sog: f(28),
        cog: f(36),
        source,
    })
}

/// Partition key of a vessel: its MMSI as 8 big-endian bytes.
pub fn mmsi_key(mmsi: Mmsi) -> [u8; 8] {
    (mmsi as u64).to_be_bytes()
}

pub fn encode_record(buf: &mut Vec<u8>, r: &Record) {
    let len = 8 + 4 + r.key.len() + r.payload.len();
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    buf.extend_from_slice(&r.offset.to_le_bytes());
    buf.extend_from_slice(&(r.key.len() as u32).to_le_bytes());
    buf.extend_from_slice(&r.key);
    buf.extend_from_slice(&r.payload);
}

fn file_header() -> Vec<u8> {
    let mut h = LOG_MAGIC.to_vec();
    h.extend_from_slice(&LOG_VERSION.to_le_bytes());
    h
}

/// Full byte image of one partition.
pub fn encode_partition(records: &[Record]) -> Vec<u8> {
    let mut buf = file_header();
    for r in records {
        encode_record(&mut buf, r);
    }
    buf
}

/// Parses a partition image, checking that offsets run 0, 1, 2, ...
pub fn decode_partition(bytes: &[u8]) -> Result<Vec<Record>, LogError> {
    if bytes.len() < 6 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != LOG_MAGIC {
            LogError::BadMagic
        } else {
            LogError::Truncated(bytes.len())
        });
    }
    if &bytes[..4] != LOG_MAGIC {
        return Err(LogError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != LOG_VERSION {
        return Err(LogError::VersionMismatch {
            found: version,
            expected: LOG_VERSION,
        });
    }
    let mut pos = 6;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        let truncated = || LogError::Truncated(start);
        let len_bytes = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        pos += 4;
        let body = bytes
            .get(pos..pos.checked_add(len).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        pos += len;
        if body.len() < 12 {
            return Err(truncated());
        }
        let offset = u64::from_le_bytes(body[0..8].try_into().expect("8 bytes"));
        let key_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let key = body.get(12..12usize.saturating_add(key_len)).ok_or_else(truncated)?;
        let payload = &body[12 + key_len..];
        let expected = out.len() as u64;
        if offset != expected {
            return Err(LogError::OffsetOutOfOrder {
                expected,
                found: offset,
            });
        }
        out.push(Record {
            offset,
            key: key.to_vec(),
            payload: payload.to_vec(),
        });
    }
    Ok(out)
}

pub fn partition_file(dir: &Path, partition: u32) -> PathBuf {
    dir.join(format!("partition-{partition:04}.gtpl"))
}

struct Partition {
    records: RwLock<Vec<Record>>,
    file: Option<Mutex<BufWriter<File>>>,
}

/// Keyed, partitioned, append-only log. Appends to one partition are
/// serialized; reads never block appends to other partitions.
pub struct PartitionedLog {
    partitions: Vec<Partition>,
    closed: AtomicBool,
    waiters: AtomicUsize,
    generation: Mutex<u64>,
    signal: Condvar,
}

impl PartitionedLog {
    pub fn in_memory(n_partitions: u32) -> Self {
        assert!(n_partitions >= 1, "a log needs at least one partition");
        Self::from_parts(
            (0..n_partitions)
                .map(|_| Partition {
                    records: RwLock::new(Vec::new()),
                    file: None,
                })
                .collect(),
        )
    }

    fn from_parts(partitions: Vec<Partition>) -> Self {
        PartitionedLog {
            partitions,
            closed: AtomicBool::new(false),
            waiters: AtomicUsize::new(0),
            generation: Mutex::new(0),
            signal: Condvar::new(),
        }
    }

    /// Creates a file-backed log, truncating any existing partition files.
    pub fn create_dir(dir: &Path, n_partitions: u32) -> Result<Self, LogError> {
        assert!(n_partitions >= 1, "a log needs at least one partition");
        std::fs::create_dir_all(dir)?;
        let mut parts = Vec::with_capacity(n_partitions as usize);
        for p in 0..n_partitions {
            let mut f = File::create(partition_file(dir, p))?;
            f.write_all(&file_header())?;
            parts.push(Partition {
                records: RwLock::new(Vec::new()),
                file: Some(Mutex::new(BufWriter::new(f))),
            });
        }
        Ok(Self::from_parts(parts))
    }

    /// Opens the partition files in `dir` and continues appending to them.
    pub fn open_dir(dir: &Path) -> Result<Self, LogError> {
        let mut parts = Vec::new();
        loop {
            let path = partition_file(dir, parts.len() as u32);
            if !path.exists() {
                break;
            }
            let records = decode_partition(&std::fs::read(&path)?)?;
            let f = OpenOptions::new().append(true).open(&path)?;
            parts.push(Partition {
                records: RwLock::new(records),
                file: Some(Mutex::new(BufWriter::new(f))),
            });
        }
        if parts.is_empty() {
            return Err(LogError::NoSuchPartition(0));
        }
        Ok(Self::from_parts(parts))
    }

    pub fn n_partitions(&self) -> u32 {
        self.partitions.len() as u32
    }

    fn partition(&self, p: u32) -> Result<&Partition, LogError> {
        self.partitions.get(p as usize).ok_or(LogError::NoSuchPartition(p))
    }

    /// Appends to a specific partition.
    pub fn append(&self, partition: u32, key: Vec<u8>, payload: Vec<u8>) -> Result<u64, LogError> {
        if self.is_closed() {
            return Err(LogError::Closed);
        }
        let part = self.partition(partition)?;
        let offset = {
            let mut records = part.records.write().expect("partition lock poisoned");
            let offset = records.len() as u64;
            let rec = Record { offset, key, payload };
            if let Some(file) = &part.file {
                let mut buf = Vec::with_capacity(16 + rec.key.len() + rec.payload.len());
                encode_record(&mut buf, &rec);
                file.lock().expect("file lock poisoned").write_all(&buf)?;
            }
            records.push(rec);
            offset
        };
        self.notify();
        Ok(offset)
    }

    /// Appends a message to the partition of its key.
    pub fn publish(&self, key: Mmsi, payload: &AisMessage) -> Result<(u32, u64), LogError> {
        let p = partition_of(key, self.n_partitions());
        let offset = self.append(p, mmsi_key(key).to_vec(), encode_message(payload))?;
        Ok((p, offset))
    }

    /// Up to `max` records starting at `from`.
    pub fn read(&self, partition: u32, from: u64, max: usize) -> Result<Vec<Record>, LogError> {
        let part = self.partition(partition)?;
        let records = part.records.read().expect("partition lock poisoned");
        let start = (from as usize).min(records.len());
        let end = start.saturating_add(max).min(records.len());
        Ok(records[start..end].to_vec())
    }

    /// Offset the next append to `partition` will get.
    pub fn end_offset(&self, partition: u32) -> Result<u64, LogError> {
        Ok(self
            .partition(partition)?
            .records
            .read()
            .expect("partition lock poisoned")
            .len() as u64)
    }

    pub fn total_records(&self) -> u64 {
        (0..self.n_partitions()).map(|p| self.end_offset(p).unwrap_or(0)).sum()
    }

    pub fn flush(&self) -> Result<(), LogError> {
        for part in &self.partitions {
            if let Some(f) = &part.file {
                f.lock().expect("file lock poisoned").flush()?;
            }
        }
        Ok(())
    }

    /// Refuses further appends and wakes waiting consumers.
    pub fn close(&self) -> Result<(), LogError> {
        self.closed.store(true, Ordering::SeqCst);
        self.flush()?;
        self.wake_all();
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn notify(&self) {
        if self.waiters.load(Ordering::SeqCst) > 0 {
            self.wake_all();
        }
    }

    fn wake_all(&self) {
        let mut g = self.generation.lock().expect("log signal poisoned");
        *g += 1;
        self.signal.notify_all();
    }

    /// Blocks until something is appended, the log closes, or `timeout` elapses.
    pub fn wait_for_data(&self, timeout: Duration) {
        self.waiters.fetch_add(1, Ordering::SeqCst);
        let g = self.generation.lock().expect("log signal poisoned");
        if !self.is_closed() {
            let seen = *g;
            let _ = self
                .signal
                .wait_timeout_while(g, timeout, |gen| *gen == seen)
                .expect("log signal poisoned");
        }
        self.waiters.fetch_sub(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(mmsi: Mmsi, t: i64) -> AisMessage {
        AisMessage::new(mmsi, t, 48.0, -5.0, 10.0, 90.0).unwrap()
    }

    #[test]
    fn same_key_same_partition_increasing_offsets() {
        let log = PartitionedLog::in_memory(16);
        let (p1, o1) = log.publish(227006760, &msg(227006760, 0)).unwrap();
        let (p2, o2) = log.publish(227006760, &msg(227006760, 1)).unwrap();
        assert_eq!(p1, p2);
        assert!(o2 > o1);
    }

    #[test]
    fn per_partition_fifo() {
        let log = PartitionedLog::in_memory(1);
        log.publish(1, &msg(1, 10)).unwrap();
        log.publish(2, &msg(2, 11)).unwrap();
        log.publish(1, &msg(1, 12)).unwrap();
        let recs = log.read(0, 0, 10).unwrap();
        let a: Vec<i64> = recs
            .iter()
            .map(|r| r.message().unwrap())
            .filter(|m| m.mmsi == 1)
            .map(|m| m.timestamp)
            .collect();
        assert_eq!(a, vec![10, 12]);
        assert_eq!(log.read(0, 2, 10).unwrap().len(), 1);
        assert!(log.read(0, 99, 10).unwrap().is_empty());
        assert!(matches!(log.read(3, 0, 1), Err(LogError::NoSuchPartition(3))));
    }

    #[test]
    fn closed_log_rejects_publish() {
        let log = PartitionedLog::in_memory(2);
        log.close().unwrap();
        assert!(matches!(log.publish(1, &msg(1, 0)), Err(LogError::Closed)));
        log.wait_for_data(Duration::from_secs(5));
    }

    #[test]
    fn message_codec() {
        let m = msg(999_999_999, -7).with_source(Source::Satellite);
        assert_eq!(decode_message(&encode_message(&m)).unwrap(), m);
        assert!(decode_message(&[0; 3]).is_err());
        let mut bad = encode_message(&m);
        bad[44] = 9;
        assert!(decode_message(&bad).is_err());
    }

    #[test]
    fn file_backed_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let log = PartitionedLog::create_dir(dir.path(), 4).unwrap();
        for i in 0..50u32 {
            log.publish(100 + i % 7, &msg(100 + i % 7, i as i64)).unwrap();
        }
        log.close().unwrap();
        drop(log);
        let reopened = PartitionedLog::open_dir(dir.path()).unwrap();
        assert_eq!(reopened.n_partitions(), 4);
        assert_eq!(reopened.total_records(), 50);
        for p in 0..4 {
            let recs = reopened.read(p, 0, usize::MAX).unwrap();
            let on_disk = std::fs::read(partition_file(dir.path(), p)).unwrap();
            assert_eq!(encode_partition(&recs), on_disk);
        }
        reopened.publish(100, &msg(100, 1000)).unwrap();
        reopened.flush().unwrap();
        let again = PartitionedLog::open_dir(dir.path()).unwrap();
        assert_eq!(again.total_records(), 51);
    }

    #[test]
    fn corrupt_partition_files() {
        let recs: Vec<Record> = (0..3)
            .map(|i| Record {
                offset: i,
                key: mmsi_key(5).to_vec(),
                payload: encode_message(&msg(5, i as i64)),
            })
            .collect();
        let bytes = encode_partition(&recs);
        assert_eq!(decode_partition(&bytes).unwrap(), recs);
        assert!(matches!(
            decode_partition(&bytes[..bytes.len() - 3]),
            Err(LogError::Truncated(_))
        ));
        assert!(matches!(decode_partition(&bytes[..3]), Err(LogError::Truncated(_))));
        let mut v = bytes.clone();
        v[4] = 7;
        assert!(matches!(
            decode_partition(&v),
            Err(LogError::VersionMismatch { found: 7, .. })
        ));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(decode_partition(&m), Err(LogError::BadMagic)));
        let mut o = bytes.clone();
        // second record's offset field
        let second = 6 + 4 + 8 + 4 + 8 + MESSAGE_LEN;
        o[second + 4] = 9;
        assert!(matches!(
            decode_partition(&o),
            Err(LogError::OffsetOutOfOrder { expected: 1, found: 9 })
        ));
    }
}

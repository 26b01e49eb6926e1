//! Replicated operator group consuming a partitioned log.
//!
//! Each replica owns a set of partitions, each with its read position and the
//! operator state of the vessels hashing to it. Replicas consume their
//! partitions in offset order on their own thread. Every `checkpoint_interval`
//! records of a partition, its next offset and serialized state are committed;
//! a crashed replica restarts from those commits and replays (at-least-once).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::log::{PartitionedLog, Record};
use super::{HandoffPlan, OperatorGroup, StreamError};
use crate::domain::{Mmsi, TrackId};
use crate::normalcy::{detect_track, Decision, DetectionRule, Scorer};
use crate::preprocess::{process_message, ClosedTrack, OperatorState, PipelineCounts, PreprocessConfig, TrackEvent};

/// One processed record, numbered in global processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub seq: u64,
    pub partition: u32,
    pub offset: u64,
    pub mmsi: Mmsi,
    pub timestamp: i64,
}

/// One alert line: a verdict whose decision is not `normal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub track_id: TrackId,
    pub mmsi: Mmsi,
    pub t_start: i64,
    /// Newest raw timestamp the verdict covers.
    pub t_end: i64,
    pub n: usize,
    pub k: usize,
    pub nfa: f64,
    pub decision: Decision,
}

impl Alert {
    /// De-duplication key under at-least-once delivery.
    pub fn key(&self) -> (TrackId, i64) {
        (self.track_id, self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClosedSummary {
    pub track_id: TrackId,
    pub points: usize,
    pub tested: bool,
}

impl From<&ClosedTrack> for ClosedSummary {
    fn from(c: &ClosedTrack) -> Self {
        ClosedSummary {
            track_id: c.id(),
            points: c.track.len(),
            tested: c.tested,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupOutput {
    Alert(Alert),
    Closed(ClosedSummary),
}

/// How every replica builds and drives its operator.
#[derive(Debug, Clone, Copy)]
pub struct OperatorSettings {
    pub preprocess: PreprocessConfig,
    pub rule: DetectionRule,
    /// Records between commits of offsets and state.
    pub checkpoint_interval: u64,
    /// Records read per partition per poll.
    pub batch: usize,
    /// Close idle tracks based on the newest event time seen (live mode).
    pub event_time_flush: bool,
}

impl OperatorSettings {
    pub fn new(preprocess: PreprocessConfig, rule: DetectionRule) -> Self {
        OperatorSettings {
            preprocess,
            rule,
            checkpoint_interval: 4096,
            batch: 512,
            event_time_flush: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Commit {
    offset: u64,
    state: Vec<u8>,
}

/// A partition held by a replica: next offset to read and its vessels' state.
#[derive(Debug, Default)]
struct Owned {
    cursor: u64,
    state: OperatorState,
    since_commit: u64,
}

#[derive(Debug)]
struct Work {
    max_event_time: i64,
    last_flush_time: i64,
    counts: PipelineCounts,
    timings: Vec<f64>,
    /// Kept only when tracing is on.
    trace: Vec<TraceEntry>,
}

struct Replica {
    owned: BTreeMap<u32, Owned>,
    work: Work,
}

impl Replica {
    fn new() -> Self {
        Replica {
            owned: BTreeMap::new(),
            work: Work {
                max_event_time: i64::MIN,
                last_flush_time: i64::MIN,
                counts: PipelineCounts::default(),
                timings: Vec::new(),
                trace: Vec::new(),
            },
        }
    }
}

/// Statistics accumulated by all replicas, retired ones included.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub counts: PipelineCounts,
    /// Wall time of each detection, seconds, including the preprocessing of
    /// the message that triggered it.
    pub detection_times: Vec<f64>,
    pub records_processed: u64,
}

/// When a call to [`GroupRunner::run`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunUntil {
    /// The log is closed and every partition has been consumed.
    Drained,
    /// This many more records have been processed (summed over replicas).
    Records(u64),
}

pub struct GroupRunner {
    log: Arc<PartitionedLog>,
    group: OperatorGroup,
    replicas: Vec<Replica>,
    commits: Mutex<Vec<Commit>>,
    scorer: Arc<dyn Scorer>,
    settings: OperatorSettings,
    sink: Sender<GroupOutput>,
    stop: Arc<AtomicBool>,
    retired: RunStats,
    tracing: bool,
    seq: AtomicU64,
    retired_trace: Vec<TraceEntry>,
}

impl GroupRunner {
    pub fn new(
        log: Arc<PartitionedLog>,
        group: OperatorGroup,
        settings: OperatorSettings,
        scorer: Arc<dyn Scorer>,
        sink: Sender<GroupOutput>,
    ) -> Result<Self, StreamError> {
        if group.n_partitions != log.n_partitions() {
            return Err(StreamError::InvalidGroup(format!(
                "group has {} partitions, log has {}",
                group.n_partitions,
                log.n_partitions()
            )));
        }
        settings
            .preprocess
            .validate()
            .map_err(|e| StreamError::InvalidGroup(e.to_string()))?;
        let empty = OperatorState::new().to_bytes();
        let commits = (0..group.n_partitions)
            .map(|_| Commit {
                offset: 0,
                state: empty.clone(),
            })
            .collect();
        let mut replicas: Vec<Replica> = (0..group.replicas).map(|_| Replica::new()).collect();
        for p in 0..group.n_partitions {
            replicas[group.owner(p)].owned.insert(p, Owned::default());
        }
        Ok(GroupRunner {
            log,
            group,
            replicas,
            commits: Mutex::new(commits),
            scorer,
            settings,
            sink,
            stop: Arc::new(AtomicBool::new(false)),
            retired: RunStats::default(),
            tracing: false,
            retired_trace: Vec::new(),
            seq: AtomicU64::new(0),
        })
    }

    /// Records `(partition, offset, mmsi, timestamp)` for every processed record.
    pub fn enable_tracing(&mut self) {
        self.tracing = true;
    }

    pub fn group(&self) -> &OperatorGroup {
        &self.group
    }

    /// Handle that makes a running [`GroupRunner::run`] return promptly.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Consumes on one thread per replica until the condition is met or a stop is requested.
    pub fn run(&mut self, until: RunUntil) -> Result<(), StreamError> {
        let budget = match until {
            RunUntil::Drained => u64::MAX,
            RunUntil::Records(n) => n,
        };
        let taken = AtomicU64::new(0);
        let ctx = WorkerCtx {
            log: &self.log,
            scorer: self.scorer.as_ref(),
            settings: &self.settings,
            sink: &self.sink,
            stop: &self.stop,
            commits: &self.commits,
            taken: &taken,
            seq: &self.seq,
            budget,
            tracing: self.tracing,
        };
        let results: Vec<Result<(), StreamError>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .replicas
                .iter_mut()
                .map(|r| {
                    let ctx = &ctx;
                    s.spawn(move || ctx.consume(r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(Err(StreamError::ReplicaPanicked)))
                .collect()
        });
        results.into_iter().collect()
    }

    /// Closes every open track of every replica (end of stream).
    pub fn finish(&mut self) -> Result<(), StreamError> {
        for r in &mut self.replicas {
            for o in r.owned.values_mut() {
                for c in o.state.flush_all() {
                    r.work.counts.record_closed(&c);
                    self.sink
                        .send(GroupOutput::Closed(ClosedSummary::from(&c)))
                        .map_err(|_| StreamError::SinkClosed)?;
                }
            }
        }
        Ok(())
    }

    /// Commits every replica's position and state.
    pub fn commit_all(&mut self) {
        let mut commits = self.commits.lock().expect("commit store poisoned");
        for r in &mut self.replicas {
            for (&p, o) in r.owned.iter_mut() {
                commit_partition(p, o, &mut commits);
            }
        }
    }

    /// Changes the replica count, shipping the state of every moved partition
    /// to its new owner. Consumption resumes from the committed offsets.
    pub fn rebalance(&mut self, new_replicas: usize) -> Result<HandoffPlan, StreamError> {
        let (next, plan) = self.group.rebalance(new_replicas)?;
        self.commit_all();
        while self.replicas.len() < next.replicas {
            self.replicas.push(Replica::new());
        }
        for mv in &plan.moves {
            let moved = self.replicas[mv.from]
                .owned
                .remove(&mv.partition)
                .expect("mover owns the partition");
            // ship the state as bytes, as a remote handoff would
            let received = Owned {
                cursor: moved.cursor,
                state: OperatorState::from_bytes(&moved.state.to_bytes())?,
                since_commit: 0,
            };
            self.replicas[mv.to].owned.insert(mv.partition, received);
        }
        for r in self.replicas.drain(next.replicas..) {
            debug_assert!(r.owned.is_empty(), "retired replica still owns partitions");
            self.retired.counts.merge(&r.work.counts);
            self.retired.detection_times.extend(r.work.timings);
            self.retired.records_processed += r.work.counts.processed;
            self.retired_trace.extend(r.work.trace);
        }
        self.group = next;
        Ok(plan)
    }

    /// Simulates a crash of one replica: its in-memory state and positions are
    /// lost and restored from the last commit.
    pub fn crash_replica(&mut self, replica: usize) -> Result<(), StreamError> {
        let r = self
            .replicas
            .get_mut(replica)
            .ok_or_else(|| StreamError::InvalidGroup(format!("no replica {replica}")))?;
        let commits = self.commits.lock().expect("commit store poisoned");
        for (&p, o) in r.owned.iter_mut() {
            let c = &commits[p as usize];
            *o = Owned {
                cursor: c.offset,
                state: OperatorState::from_bytes(&c.state)?,
                since_commit: 0,
            };
        }
        Ok(())
    }

    pub fn stats(&self) -> RunStats {
        let mut s = self.retired.clone();
        for r in &self.replicas {
            s.counts.merge(&r.work.counts);
            s.detection_times.extend_from_slice(&r.work.timings);
            s.records_processed += r.work.counts.processed;
        }
        s
    }

    /// Processing trace of all replicas in processing order, when tracing is enabled.
    pub fn trace(&self) -> Vec<TraceEntry> {
        let mut t = self.retired_trace.clone();
        for r in &self.replicas {
            t.extend_from_slice(&r.work.trace);
        }
        t.sort_by_key(|e| e.seq);
        t
    }

    pub fn active_tracks(&self) -> usize {
        self.replicas
            .iter()
            .flat_map(|r| r.owned.values())
            .map(|o| o.state.active_tracks())
            .sum()
    }
}

fn commit_partition(p: u32, o: &mut Owned, commits: &mut [Commit]) {
    commits[p as usize] = Commit {
        offset: o.cursor,
        state: o.state.to_bytes(),
    };
    o.since_commit = 0;
}

struct WorkerCtx<'a> {
    log: &'a PartitionedLog,
    scorer: &'a dyn Scorer,
    settings: &'a OperatorSettings,
    sink: &'a Sender<GroupOutput>,
    stop: &'a AtomicBool,
    commits: &'a Mutex<Vec<Commit>>,
    taken: &'a AtomicU64,
    seq: &'a AtomicU64,
    budget: u64,
    tracing: bool,
}

impl WorkerCtx<'_> {
    fn consume(&self, r: &mut Replica) -> Result<(), StreamError> {
        loop {
            if self.stop.load(Ordering::Relaxed) {
                return Ok(());
            }
            let mut progressed = false;
            for (&p, o) in r.owned.iter_mut() {
                let batch = self.log.read(p, o.cursor, self.settings.batch)?;
                for rec in &batch {
                    if self.taken.fetch_add(1, Ordering::Relaxed) >= self.budget {
                        return Ok(());
                    }
                    self.process(&mut o.state, &mut r.work, p, rec)?;
                    o.cursor = rec.offset + 1;
                    o.since_commit += 1;
                    if o.since_commit >= self.settings.checkpoint_interval {
                        commit_partition(p, o, &mut self.commits.lock().expect("commit store poisoned"));
                    }
                    progressed = true;
                }
            }
            if self.settings.event_time_flush {
                self.event_time_flush(r)?;
            }
            if !progressed {
                if self.log.is_closed() && self.drained(r)? {
                    return Ok(());
                }
                self.log.wait_for_data(Duration::from_millis(50));
            }
        }
    }

    fn drained(&self, r: &Replica) -> Result<bool, StreamError> {
        for (&p, o) in &r.owned {
            if o.cursor < self.log.end_offset(p)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn process(
        &self,
        state: &mut OperatorState,
        w: &mut Work,
        partition: u32,
        rec: &Record,
    ) -> Result<(), StreamError> {
        let msg = rec.message()?;
        if self.tracing {
            w.trace.push(TraceEntry {
                seq: self.seq.fetch_add(1, Ordering::Relaxed),
                partition,
                offset: rec.offset,
                mmsi: msg.mmsi,
                timestamp: msg.timestamp,
            });
        }
        w.max_event_time = w.max_event_time.max(msg.timestamp);
        let started = Instant::now();
        let events = process_message(state, msg, &self.settings.preprocess, &mut w.counts);
        for e in events {
            match e {
                TrackEvent::Closed(c) => self.emit(GroupOutput::Closed(ClosedSummary::from(&c)))?,
                TrackEvent::DetectionDue(due) => {
                    let v = detect_track(self.scorer, &due.track, &self.settings.rule)?;
                    w.timings.push(started.elapsed().as_secs_f64());
                    if v.decision != Decision::Normal {
                        self.emit(GroupOutput::Alert(Alert {
                            track_id: due.track_id,
                            mmsi: v.mmsi,
                            t_start: v.t_start,
                            t_end: due.watermark,
                            n: v.n,
                            k: v.k,
                            nfa: v.nfa,
                            decision: v.decision,
                        }))?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn event_time_flush(&self, r: &mut Replica) -> Result<(), StreamError> {
        let w = &mut r.work;
        let now = w.max_event_time;
        if now == i64::MIN || now.saturating_sub(w.last_flush_time) < self.settings.preprocess.resample_period_s {
            return Ok(());
        }
        w.last_flush_time = now;
        for o in r.owned.values_mut() {
            for c in o.state.flush(now, &self.settings.preprocess) {
                w.counts.record_closed(&c);
                self.emit(GroupOutput::Closed(ClosedSummary::from(&c)))?;
            }
        }
        Ok(())
    }

    fn emit(&self, out: GroupOutput) -> Result<(), StreamError> {
        self.sink.send(out).map_err(|_| StreamError::SinkClosed)
    }
}

/// Everything a finished group run produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub alerts: Vec<Alert>,
    pub closed: Vec<ClosedSummary>,
    pub stats: RunStats,
    pub wall_seconds: f64,
}

impl RunOutcome {
    /// Alerts with at-least-once duplicates removed.
    pub fn unique_alerts(&self) -> Vec<Alert> {
        dedup_alerts(&self.alerts)
    }

    /// Tracks with at least one alert.
    pub fn alerted_tracks(&self) -> BTreeSet<TrackId> {
        self.alerts.iter().map(|a| a.track_id).collect()
    }
}

pub fn dedup_alerts(alerts: &[Alert]) -> Vec<Alert> {
    let mut seen = BTreeMap::new();
    for a in alerts {
        seen.entry(a.key()).or_insert_with(|| a.clone());
    }
    seen.into_values().collect()
}

pub fn drain_outputs(rx: &Receiver<GroupOutput>, outcome: &mut RunOutcome) {
    for out in rx.try_iter() {
        match out {
            GroupOutput::Alert(a) => outcome.alerts.push(a),
            GroupOutput::Closed(c) => outcome.closed.push(c),
        }
    }
}

/// Consumes a log with a replicated operator group until it is closed and
/// drained, then closes every remaining track.
pub fn run_group(
    log: Arc<PartitionedLog>,
    group: OperatorGroup,
    settings: OperatorSettings,
    scorer: Arc<dyn Scorer>,
) -> Result<RunOutcome, StreamError> {
    let (tx, rx) = unbounded();
    let mut runner = GroupRunner::new(log, group, settings, scorer, tx)?;
    let started = Instant::now();
    runner.run(RunUntil::Drained)?;
    runner.finish()?;
    let mut outcome = RunOutcome {
        wall_seconds: started.elapsed().as_secs_f64(),
        stats: runner.stats(),
        ..RunOutcome::default()
    };
    drop(runner);
    drain_outputs(&rx, &mut outcome);
    Ok(outcome)
}

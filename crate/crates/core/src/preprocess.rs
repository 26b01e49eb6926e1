//! Incremental track building: validity filtering, gap splitting, linear
//! resampling and detection triggering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_course, AisMessage, Mmsi, Roi, Track, TrackId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("invalid preprocessing configuration: {0}")]
    InvalidConfig(String),
    #[error("resampling needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("track timestamps are not strictly increasing")]
    NonMonotone,
    #[error("state handoff payload is corrupt: {0}")]
    Handoff(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub roi: Roi,
    pub max_sog_knots: f64,
    pub gap_threshold_s: i64,
    pub resample_period_s: i64,
    pub min_track_duration_s: i64,
    /// Additional track duration between re-scorings once the first detection fired.
    pub redetect_period_s: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            // Ushant traffic separation scheme area
            roi: Roi {
                lat_min: 47.5,
                lat_max: 49.5,
                lon_min: -7.0,
                lon_max: -4.0,
            },
            max_sog_knots: 30.0,
            gap_threshold_s: 4 * 3600,
            resample_period_s: 600,
            min_track_duration_s: 4 * 3600,
            redetect_period_s: 3600,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        self.roi
            .validate()
            .map_err(|e| PreprocessError::InvalidConfig(e.to_string()))?;
        if !(self.max_sog_knots.is_finite() && self.max_sog_knots > 0.0) {
            return Err(PreprocessError::InvalidConfig("max_sog_knots must be > 0".into()));
        }
        for (name, v) in [
            ("gap_threshold_s", self.gap_threshold_s),
            ("resample_period_s", self.resample_period_s),
            ("min_track_duration_s", self.min_track_duration_s),
            ("redetect_period_s", self.redetect_period_s),
        ] {
            if v <= 0 {
                return Err(PreprocessError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.resample_period_s > self.min_track_duration_s {
            return Err(PreprocessError::InvalidConfig(
                "resample_period_s must not exceed min_track_duration_s".into(),
            ));
        }
        Ok(())
    }

    /// Points in a resampled track of exactly the minimum duration.
    pub fn min_points(&self) -> usize {
        (self.min_track_duration_s / self.resample_period_s) as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    OutOfRoi,
    OverSpeed,
    NonMonotoneTime,
    DuplicateTime,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::OutOfRoi => "out-of-roi",
            DropReason::OverSpeed => "over-speed",
            DropReason::NonMonotoneTime => "non-monotone-time",
            DropReason::DuplicateTime => "duplicate-time",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Keep,
    Drop(DropReason),
}

/// Validity rules. `last_seen` is the timestamp of the last kept message of this vessel.
pub fn validate(msg: &AisMessage, cfg: &PreprocessConfig, last_seen: Option<i64>) -> Validity {
    if !cfg.roi.contains(msg.lat, msg.lon) {
        return Validity::Drop(DropReason::OutOfRoi);
    }
    if msg.sog > cfg.max_sog_knots {
        return Validity::Drop(DropReason::OverSpeed);
    }
    match last_seen {
        Some(t) if msg.timestamp == t => Validity::Drop(DropReason::DuplicateTime),
        Some(t) if msg.timestamp < t => Validity::Drop(DropReason::NonMonotoneTime),
        _ => Validity::Keep,
    }
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + (b - a) * f
}

/// Interpolates a course along the shorter arc.
pub fn lerp_course(a: f64, b: f64, f: f64) -> f64 {
    let delta = (b - a + 540.0).rem_euclid(360.0) - 180.0;
    normalize_course(a + delta * f)
}

/// Linear resampling onto `t0, t0 + period, ...` up to the last original timestamp.
pub fn resample(track: &Track, period_s: i64) -> Result<Track, PreprocessError> {
    if track.points.len() < 2 {
        return Err(PreprocessError::TooFewPoints(track.points.len()));
    }
    if period_s <= 0 {
        return Err(PreprocessError::InvalidConfig("period must be > 0".into()));
    }
    if !track.is_strictly_increasing() {
        return Err(PreprocessError::NonMonotone);
    }
    let pts = &track.points;
    let t0 = pts[0].timestamp;
    let t_end = pts[pts.len() - 1].timestamp;
    let mut out = Vec::with_capacity(((t_end - t0) / period_s) as usize + 1);
    let mut seg = 0;
    let mut t = t0;
    while t <= t_end {
        while pts[seg + 1].timestamp < t {
            seg += 1;
        }
        let (a, b) = (&pts[seg], &pts[seg + 1]);
        let p = if t == a.timestamp {
            *a
        } else if t == b.timestamp {
            *b
        } else {
            let f = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
            AisMessage {
                mmsi: a.mmsi,
                timestamp: t,
                lat: lerp(a.lat, b.lat, f),
                lon: lerp(a.lon, b.lon, f),
                sog: lerp(a.sog, b.sog, f).max(0.0),
                cog: lerp_course(a.cog, b.cog, f),
                source: a.source,
            }
        };
        out.push(p);
        t += period_s;
    }
    Ok(Track {
        mmsi: track.mmsi,
        points: out,
        complete: track.complete,
    })
}

/// A track that has been closed by a gap or a flush.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedTrack {
    pub track: Track,
    /// At least one detection fired for it; otherwise it failed preprocessing.
    pub tested: bool,
}

impl ClosedTrack {
    pub fn id(&self) -> TrackId {
        self.track.id()
    }
}

/// Snapshot of a track handed to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDue {
    pub track_id: TrackId,
    /// Timestamp of the newest raw point included.
    pub watermark: i64,
    /// Resampled track.
    pub track: Track,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackEvent {
    Opened(TrackId),
    Extended { track_id: TrackId, points: usize },
    Closed(ClosedTrack),
    DetectionDue(DetectionDue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OpenTrack {
    points: Vec<AisMessage>,
    /// Track duration at which the next detection fires.
    next_due: i64,
    detections: u32,
}

impl OpenTrack {
    fn new(msg: AisMessage, cfg: &PreprocessConfig) -> Self {
        OpenTrack {
            points: vec![msg],
            next_due: cfg.min_track_duration_s,
            detections: 0,
        }
    }

    fn id(&self) -> TrackId {
        TrackId {
            mmsi: self.points[0].mmsi,
            start: self.points[0].timestamp,
        }
    }

    fn last_ts(&self) -> i64 {
        self.points[self.points.len() - 1].timestamp
    }

    fn close(self) -> ClosedTrack {
        let mmsi = self.points[0].mmsi;
        ClosedTrack {
            tested: self.detections > 0,
            track: Track {
                mmsi,
                points: self.points,
                complete: true,
            },
        }
    }
}

/// Per-operator state: at most one open track per vessel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorState {
    open: BTreeMap<Mmsi, OpenTrack>,
}

impl OperatorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn active_tracks(&self) -> usize {
        self.open.len()
    }

    pub fn last_seen(&self, mmsi: Mmsi) -> Option<i64> {
        self.open.get(&mmsi).map(OpenTrack::last_ts)
    }

    pub fn open_track(&self, mmsi: Mmsi) -> Option<Track> {
        self.open.get(&mmsi).map(|o| Track::new(mmsi, o.points.clone()))
    }

    pub fn validate(&self, msg: &AisMessage, cfg: &PreprocessConfig) -> Validity {
        validate(msg, cfg, self.last_seen(msg.mmsi))
    }

    /// Adds an already validated message and reports what happened.
    pub fn ingest_message(&mut self, msg: AisMessage, cfg: &PreprocessConfig) -> Vec<TrackEvent> {
        let mut events = Vec::with_capacity(2);
        let mmsi = msg.mmsi;
        let split = match self.open.get(&mmsi) {
            Some(open) => msg.timestamp - open.last_ts() > cfg.gap_threshold_s,
            None => false,
        };
        if split {
            let prev = self.open.remove(&mmsi).expect("checked above");
            events.push(TrackEvent::Closed(prev.close()));
        }
        let open = match self.open.entry(mmsi) {
            std::collections::btree_map::Entry::Vacant(v) => {
                let open = v.insert(OpenTrack::new(msg, cfg));
                events.push(TrackEvent::Opened(open.id()));
                open
            }
            std::collections::btree_map::Entry::Occupied(o) => {
                let open = o.into_mut();
                open.points.push(msg);
                events.push(TrackEvent::Extended {
                    track_id: open.id(),
                    points: open.points.len(),
                });
                open
            }
        };
        let duration = open.last_ts() - open.points[0].timestamp;
        if duration >= open.next_due {
            open.detections += 1;
            let steps = (duration - cfg.min_track_duration_s) / cfg.redetect_period_s + 1;
            open.next_due = cfg.min_track_duration_s + steps * cfg.redetect_period_s;
            let raw = Track::new(mmsi, open.points.clone());
            let track =
                resample(&raw, cfg.resample_period_s).expect("open tracks are strictly increasing and span > 0 s here");
            events.push(TrackEvent::DetectionDue(DetectionDue {
                track_id: open.id(),
                watermark: open.last_ts(),
                track,
            }));
        }
        events
    }

    /// Closes tracks idle for longer than the gap threshold relative to `now`.
    pub fn flush(&mut self, now: i64, cfg: &PreprocessConfig) -> Vec<ClosedTrack> {
        let stale: Vec<Mmsi> = self
            .open
            .iter()
            .filter(|(_, o)| now - o.last_ts() > cfg.gap_threshold_s)
            .map(|(m, _)| *m)
            .collect();
        stale
            .into_iter()
            .map(|m| self.open.remove(&m).expect("listed above").close())
            .collect()
    }

    /// Closes every open track (end of stream).
    pub fn flush_all(&mut self) -> Vec<ClosedTrack> {
        std::mem::take(&mut self.open)
            .into_values()
            .map(OpenTrack::close)
            .collect()
    }

    /// Removes and returns the open tracks of the vessels selected by `owns`.
    pub fn split_off(&mut self, mut owns: impl FnMut(Mmsi) -> bool) -> OperatorState {
        let keys: Vec<Mmsi> = self.open.keys().copied().filter(|&m| owns(m)).collect();
        let mut out = OperatorState::new();
        for k in keys {
            let v = self.open.remove(&k).expect("key listed above");
            out.open.insert(k, v);
        }
        out
    }

    /// Copy of the open tracks selected by `owns`, leaving `self` untouched.
    pub fn slice(&self, mut owns: impl FnMut(Mmsi) -> bool) -> OperatorState {
        OperatorState {
            open: self
                .open
                .iter()
                .filter(|(m, _)| owns(**m))
                .map(|(m, o)| (*m, o.clone()))
                .collect(),
        }
    }

    /// Merges a disjoint slice into this state.
    pub fn absorb(&mut self, other: OperatorState) {
        self.open.extend(other.open);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("operator state serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PreprocessError> {
        serde_json::from_slice(bytes).map_err(|e| PreprocessError::Handoff(e.to_string()))
    }
}

/// Message and track accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub processed: u64,
    pub kept: u64,
    pub dropped_out_of_roi: u64,
    pub dropped_over_speed: u64,
    pub dropped_non_monotone: u64,
    pub dropped_duplicate: u64,
    /// Tracks closed.
    pub built: u64,
    /// Closed tracks that never reached the minimum duration.
    pub rejected: u64,
    /// Closed tracks scored at least once.
    pub tested: u64,
    pub detections: u64,
}

impl PipelineCounts {
    pub fn dropped(&self) -> u64 {
        self.dropped_out_of_roi + self.dropped_over_speed + self.dropped_non_monotone + self.dropped_duplicate
    }

    pub fn record_drop(&mut self, reason: DropReason) {
        match reason {
            DropReason::OutOfRoi => self.dropped_out_of_roi += 1,
            DropReason::OverSpeed => self.dropped_over_speed += 1,
            DropReason::NonMonotoneTime => self.dropped_non_monotone += 1,
            DropReason::DuplicateTime => self.dropped_duplicate += 1,
        }
    }

    pub fn record_closed(&mut self, closed: &ClosedTrack) {
        self.built += 1;
        if closed.tested {
            self.tested += 1;
        } else {
            self.rejected += 1;
        }
    }

    pub fn merge(&mut self, o: &PipelineCounts) {
        self.processed += o.processed;
        self.kept += o.kept;
        self.dropped_out_of_roi += o.dropped_out_of_roi;
        self.dropped_over_speed += o.dropped_over_speed;
        self.dropped_non_monotone += o.dropped_non_monotone;
        self.dropped_duplicate += o.dropped_duplicate;
        self.built += o.built;
        self.rejected += o.rejected;
        self.tested += o.tested;
        self.detections += o.detections;
    }

    /// `processed = kept + dropped` and `built = rejected + tested`.
    pub fn is_consistent(&self) -> bool {
        self.processed == self.kept + self.dropped() && self.built == self.rejected + self.tested
    }
}

/// Validates, filters and ingests one raw message, updating `counts`.
pub fn process_message(
    state: &mut OperatorState,
    msg: AisMessage,
    cfg: &PreprocessConfig,
    counts: &mut PipelineCounts,
) -> Vec<TrackEvent> {
    counts.processed += 1;
    match state.validate(&msg, cfg) {
        Validity::Drop(reason) => {
            counts.record_drop(reason);
            Vec::new()
        }
        Validity::Keep => {
            counts.kept += 1;
            let events = state.ingest_message(msg, cfg);
            for e in &events {
                match e {
                    TrackEvent::Closed(c) => counts.record_closed(c),
                    TrackEvent::DetectionDue(_) => counts.detections += 1,
                    _ => {}
                }
            }
            events
        }
    }
}

/// Output of a batch run over a finite message set.
#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    pub closed: Vec<ClosedTrack>,
    pub detections: Vec<DetectionDue>,
    pub counts: PipelineCounts,
}

impl BatchOutput {
    /// Resampled full tracks that passed preprocessing.
    pub fn tested_tracks(&self, cfg: &PreprocessConfig) -> Vec<Track> {
        self.closed
            .iter()
            .filter(|c| c.tested)
            .map(|c| resample(&c.track, cfg.resample_period_s).expect("tested tracks span the minimum duration"))
            .collect()
    }
}

/// Runs the operator over a finite set of messages, stable-sorted by time, then
/// closes everything left open.
pub fn build_tracks(messages: &[AisMessage], cfg: &PreprocessConfig) -> BatchOutput {
    let mut sorted = messages.to_vec();
    sorted.sort_by_key(|m| m.timestamp);
    let mut state = OperatorState::new();
    let mut out = BatchOutput::default();
    for msg in sorted {
        for e in process_message(&mut state, msg, cfg, &mut out.counts) {
            match e {
                TrackEvent::Closed(c) => out.closed.push(c),
                TrackEvent::DetectionDue(d) => out.detections.push(d),
                _ => {}
            }
        }
    }
    for c in state.flush_all() {
        out.counts.record_closed(&c);
        out.closed.push(c);
    }
    out.closed.sort_by_key(|c| c.id());
    out
}

/// Writes tracks as CSV with a leading `track_id` column.
pub fn write_tracks_csv<W: std::io::Write>(mut w: W, tracks: &[Track]) -> std::io::Result<()> {
    writeln!(w, "track_id,{}", crate::ingest::CSV_HEADER)?;
    for t in tracks.iter().filter(|t| !t.is_empty()) {
        let id = t.id();
        for p in &t.points {
            writeln!(w, "{id},{}", crate::ingest::render_record(p))?;
        }
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{capacity_estimate, replay_into_log, timing_stats, unique_mmsi_cdf, BenchError, CdfCurve, TimingStats};
use crate::domain::AisMessage;
use crate::normalcy::{DetectionRule, Scorer};
use crate::preprocess::{PipelineCounts, PreprocessConfig};
use crate::stream::{run_group, OperatorGroup, OperatorSettings, PartitionedLog};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub preprocess: PreprocessConfig,
    pub rule: DetectionRule,
    pub n_partitions: u32,
    /// One run per entry; timing and counts come from the first.
    pub replica_counts: Vec<usize>,
    pub window_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub replicas: usize,
    pub wall_seconds: f64,
    pub tracks_scored: u64,
    pub tracks_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `None` when no track was scored.
    pub timing: Option<TimingStats>,
    pub cdf: CdfCurve,
    pub readings: Vec<String>,
    pub peak_unique_mmsi: u64,
    pub capacity_cores: Option<u32>,
    pub counts: PipelineCounts,
    pub throughput: Vec<ThroughputPoint>,
}

const COUNT_FIELDS: [&str; 10] = [
    "processed",
    "kept",
    "dropped_out_of_roi",
    "dropped_over_speed",
    "dropped_non_monotone",
    "dropped_duplicate",
    "built",
    "rejected",
    "tested",
    "detections",
];

fn count_values(c: &PipelineCounts) -> [u64; 10] {
    [
        c.processed,
        c.kept,
        c.dropped_out_of_roi,
        c.dropped_over_speed,
        c.dropped_non_monotone,
        c.dropped_duplicate,
        c.built,
        c.rejected,
        c.tested,
        c.detections,
    ]
}

fn readings(cdf: &CdfCurve) -> Vec<String> {
    if cdf.windows == 0 {
        return Vec::new();
    }
    [0.8, 0.9].iter().map(|&p| cdf.reading(p)).collect()
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))
    }

    /// `metric,value` rows; timing rows come first, missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let t = self.timing.as_ref();
        for (name, get) in [
            ("mean", t.map(|t| t.mean)),
            ("std", t.map(|t| t.std)),
            ("min", t.map(|t| t.min)),
            ("q1", t.map(|t| t.q1)),
            ("median", t.map(|t| t.median)),
            ("q3", t.map(|t| t.q3)),
            ("max", t.map(|t| t.max)),
        ] {
            rows.push((name.into(), opt(get)));
        }
        rows.push(("samples".into(), t.map_or(String::new(), |t| t.count.to_string())));
        rows.push(("peak_unique_mmsi".into(), self.peak_unique_mmsi.to_string()));
        rows.push((
            "capacity_cores".into(),
            self.capacity_cores.map_or(String::new(), |c| c.to_string()),
        ));
        for (name, v) in COUNT_FIELDS.iter().zip(count_values(&self.counts)) {
            rows.push((format!("count.{name}"), v.to_string()));
        }
        for (i, p) in self.throughput.iter().enumerate() {
            rows.push((format!("throughput.{i}.replicas"), p.replicas.to_string()));
            rows.push((format!("throughput.{i}.wall_seconds"), p.wall_seconds.to_string()));
            rows.push((format!("throughput.{i}.tracks_scored"), p.tracks_scored.to_string()));
            rows.push((
                format!("throughput.{i}.tracks_per_second"),
                p.tracks_per_second.to_string(),
            ));
        }
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn from_csv(report_csv: &str, cdf_csv: &str) -> Result<Self, BenchError> {
        let bad = |m: String| BenchError::Parse(format!("report csv: {m}"));
        let mut lines = report_csv.lines();
        if lines.next() != Some("metric,value") {
            return Err(bad("missing header".into()));
        }
        let mut kv = BTreeMap::new();
        for l in lines.filter(|l| !l.is_empty()) {
            let (k, v) = l.split_once(',').ok_or_else(|| bad(l.into()))?;
            kv.insert(k.to_string(), v.to_string());
        }
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<Option<T>, BenchError> {
            match kv.get(k).map(String::as_str) {
                None => Err(BenchError::Parse(format!("report csv: missing {k}"))),
                Some("") => Ok(None),
                Some(v) => v
                    .parse()
                    .map(Some)
                    .map_err(|_| BenchError::Parse(format!("report csv: bad {k}={v}"))),
            }
        }
        let req = |k: &str| get::<u64>(&kv, k)?.ok_or_else(|| bad(format!("empty {k}")));
        let timing = match get::<f64>(&kv, "mean")? {
            None => None,
            Some(mean) => {
                let f = |k: &str| get::<f64>(&kv, k)?.ok_or_else(|| bad(format!("empty {k}")));
                Some(TimingStats {
                    count: req("samples")? as usize,
                    mean,
                    std: f("std")?,
                    min: f("min")?,
                    q1: f("q1")?,
                    median: f("median")?,
                    q3: f("q3")?,
                    max: f("max")?,
                })
            }
        };
        let mut c = [0u64; 10];
        for (slot, name) in c.iter_mut().zip(COUNT_FIELDS) {
            *slot = req(&format!("count.{name}"))?;
        }
        let counts = PipelineCounts {
            processed: c[0],
            kept: c[1],
            dropped_out_of_roi: c[2],
            dropped_over_speed: c[3],
            dropped_non_monotone: c[4],
            dropped_duplicate: c[5],
            built: c[6],
            rejected: c[7],
            tested: c[8],
            detections: c[9],
        };
        let mut throughput = Vec::new();
        while kv.contains_key(&format!("throughput.{}.replicas", throughput.len())) {
            let i = throughput.len();
            let f = |k: &str| get::<f64>(&kv, &format!("throughput.{i}.{k}"))?.ok_or_else(|| bad(k.into()));
            throughput.push(ThroughputPoint {
                replicas: req(&format!("throughput.{i}.replicas"))? as usize,
                wall_seconds: f("wall_seconds")?,
                tracks_scored: req(&format!("throughput.{i}.tracks_scored"))?,
                tracks_per_second: f("tracks_per_second")?,
            });
        }
        let cdf = CdfCurve::from_csv(cdf_csv)?;
        Ok(BenchReport {
            timing,
            readings: readings(&cdf),
            cdf,
            peak_unique_mmsi: req("peak_unique_mmsi")?,
            capacity_cores: get(&kv, "capacity_cores")?,
            counts,
            throughput,
        })
    }
}

/// Replays `messages` through the operator once per replica count, timing
/// detection and throughput, then derives the window CDF and core estimate.
pub fn run_benchmark(
    messages: &[AisMessage],
    scorer: Arc<dyn Scorer>,
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if cfg.replica_counts.is_empty() {
        return Err(BenchError::InvalidScenario("no replica counts".into()));
    }
    let mut sorted = messages.to_vec();
    sorted.sort_by_key(|m| m.timestamp);
    let settings = OperatorSettings::new(cfg.preprocess, cfg.rule);
    let mut throughput = Vec::new();
    let mut first = None;
    for &replicas in &cfg.replica_counts {
        let group = OperatorGroup::new(cfg.n_partitions, replicas)?;
        let log = Arc::new(PartitionedLog::in_memory(cfg.n_partitions));
        replay_into_log(&sorted, f64::INFINITY, &log).map_err(crate::stream::StreamError::from)?;
        let outcome = run_group(log, group, settings, Arc::clone(&scorer))?;
        let scored = outcome.stats.counts.detections;
        throughput.push(ThroughputPoint {
            replicas,
            wall_seconds: outcome.wall_seconds,
            tracks_scored: scored,
            tracks_per_second: if outcome.wall_seconds > 0.0 {
                scored as f64 / outcome.wall_seconds
            } else {
                0.0
            },
        });
        first.get_or_insert(outcome.stats);
    }
    let stats = first.expect("at least one run");
    let timing = timing_stats(&stats.detection_times).ok();
    let cdf = unique_mmsi_cdf(&sorted, cfg.window_s)?;
    let peak = cdf.peak();
    let capacity_cores = match &timing {
        Some(t) if peak > 0 => Some(capacity_estimate(
            peak,
            t.mean.max(f64::MIN_POSITIVE),
            cfg.window_s as f64,
        )?),
        _ => None,
    };
    Ok(BenchReport {
        timing,
        readings: readings(&cdf),
        cdf,
        peak_unique_mmsi: peak,
        capacity_cores,
        counts: stats.counts,
        throughput,
    })
}

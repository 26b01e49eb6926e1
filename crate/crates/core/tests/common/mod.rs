#![allow(dead_code)]

use std::sync::Arc;

use aiswatch_core::bench::{generate, GeneratedTraffic, SyntheticScenario};
use aiswatch_core::domain::{GridConfig, TrackId};
use aiswatch_core::normalcy::{DetectionRule, NormalcyModel, NormalcyParams};
use aiswatch_core::pipeline::train;
use aiswatch_core::preprocess::PreprocessConfig;
use aiswatch_core::stream::{Alert, OperatorSettings, PartitionedLog, RunOutcome};

pub struct Fixture {
    pub traffic: GeneratedTraffic,
    pub model: Arc<NormalcyModel>,
    pub settings: OperatorSettings,
}

/// Mixed traffic plus a model trained on separate clean traffic.
pub fn fixture(clean: usize, anomalous: usize, seed: u64) -> Fixture {
    let cfg = PreprocessConfig::default();
    let training = generate(&SyntheticScenario::three_lanes(120, 0, seed + 1000)).unwrap();
    let (model, _) = train(
        &training.messages,
        &cfg,
        GridConfig::default(),
        NormalcyParams::default(),
    )
    .unwrap();
    let rule = DetectionRule::new(&model.params, cfg.min_points());
    let mut scenario = SyntheticScenario::three_lanes(clean, anomalous, seed);
    scenario.duration_s = 3 * 86_400;
    Fixture {
        traffic: generate(&scenario).unwrap(),
        model: Arc::new(model),
        settings: OperatorSettings::new(cfg, rule),
    }
}

pub fn filled_log(f: &Fixture, n_partitions: u32) -> Arc<PartitionedLog> {
    let log = PartitionedLog::in_memory(n_partitions);
    for m in &f.traffic.messages {
        log.publish(m.mmsi, m).unwrap();
    }
    log.close().unwrap();
    Arc::new(log)
}

pub fn alert_set(alerts: &[Alert]) -> Vec<(TrackId, i64, usize, usize, String)> {
    let mut v: Vec<_> = alerts
        .iter()
        .map(|a| (a.track_id, a.t_end, a.n, a.k, a.decision.to_string()))
        .collect();
    v.sort();
    v.dedup();
    v
}

pub fn closed_multiset(o: &RunOutcome) -> Vec<(TrackId, usize, bool)> {
    let mut v: Vec<_> = o.closed.iter().map(|c| (c.track_id, c.points, c.tested)).collect();
    v.sort();
    v
}

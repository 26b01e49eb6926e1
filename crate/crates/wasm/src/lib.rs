//! Browser demo: a synthetic detection map, an NFA explorer and a
//! traffic-density / capacity explorer. Every export returns a JSON string.

use aiswatch_core::bench::{capacity_estimate, generate, unique_mmsi_cdf, AnomalyKind, SyntheticScenario};
use aiswatch_core::domain::{GridConfig, Roi};
use aiswatch_core::normalcy::{binomial_tail, Decision, DetectionRule, NormalcyParams, Scorer};
use aiswatch_core::pipeline::{detect_batch, train};
use aiswatch_core::preprocess::PreprocessConfig;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CellView {
    pub row: usize,
    pub col: usize,
    pub messages: u64,
    pub validated: bool,
}

#[derive(Debug, Serialize)]
pub struct TrackView {
    pub track_id: String,
    /// Injected anomaly, if any.
    pub truth: Option<AnomalyKind>,
    pub decision: Decision,
    pub n: usize,
    pub k: usize,
    pub nfa: f64,
    /// Resampled `(lat, lon)` points.
    pub path: Vec<(f64, f64)>,
    /// Per-point flag from the cell thresholds.
    pub flags: Vec<bool>,
}

#[derive(Debug, Serialize)]
pub struct DetectionMap {
    pub roi: Roi,
    pub cell_size_deg: f64,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<CellView>,
    pub tracks: Vec<TrackView>,
    pub detected: usize,
    pub injected: usize,
    pub clean_flagged: usize,
    pub clean: usize,
}

/// Trains on clean three-lane traffic, then scores a second scenario with
/// injected anomalies.
pub fn detection_map_data(
    train_vessels: usize,
    test_clean: usize,
    test_anomalous: usize,
    q: f64,
    min_cell_count: u64,
    seed: u64,
) -> Result<DetectionMap, String> {
    let pre = PreprocessConfig::default();
    let params = NormalcyParams {
        q,
        min_cell_count,
        ..NormalcyParams::default()
    };
    params.validate().map_err(|e| e.to_string())?;
    let days = |mut s: SyntheticScenario| {
        s.duration_s = 3 * 86_400;
        s
    };
    let training = generate(&days(SyntheticScenario::three_lanes(
        train_vessels,
        0,
        seed.wrapping_add(1000),
    )))
    .map_err(|e| e.to_string())?;
    let (model, _) = train(&training.messages, &pre, GridConfig::default(), params).map_err(|e| e.to_string())?;

    let mut test = days(SyntheticScenario::three_lanes(test_clean, test_anomalous, seed));
    test.mmsi_base = 228_000_000;
    let traffic = generate(&test).map_err(|e| e.to_string())?;
    let rule = DetectionRule::new(&params, pre.min_points());
    let (verdicts, batch) = detect_batch(&model, &traffic.messages, &pre, &rule).map_err(|e| e.to_string())?;

    let shape = model.shape();
    let cells = model
        .cell_totals()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > 0)
        .map(|(i, &t)| {
            let c = shape.cell_at(i);
            CellView {
                row: c.row as usize,
                col: c.col as usize,
                messages: t,
                validated: model.threshold(i).is_some(),
            }
        })
        .collect();

    let mut tracks = Vec::new();
    let tested = batch.tested_tracks(&pre);
    for (v, t) in verdicts.iter().zip(&tested) {
        let truth = traffic
            .vessels
            .iter()
            .find(|x| x.mmsi == v.mmsi)
            .and_then(|x| x.anomaly);
        tracks.push(TrackView {
            track_id: v.track_id.to_string(),
            truth,
            decision: v.decision,
            n: v.n,
            k: v.k,
            nfa: v.nfa,
            path: t.points.iter().map(|p| (p.lat, p.lon)).collect(),
            flags: v.flags.iter().map(|f| f.abnormal).collect(),
        });
    }
    let flagged = |t: &&TrackView| t.decision != Decision::Normal;
    let detected = tracks
        .iter()
        .filter(|t| t.truth.is_some() && t.decision == Decision::Abnormal)
        .count();
    let clean_flagged = tracks.iter().filter(|t| t.truth.is_none()).filter(flagged).count();
    Ok(DetectionMap {
        roi: model.roi,
        cell_size_deg: model.grid.cell_size_deg,
        rows: shape.rows,
        cols: shape.cols,
        cells,
        injected: tracks.iter().filter(|t| t.truth.is_some()).count(),
        clean: tracks.iter().filter(|t| t.truth.is_none()).count(),
        tracks,
        detected,
        clean_flagged,
    })
}

#[derive(Debug, Serialize)]
pub struct NfaRow {
    pub k: u64,
    pub tail: f64,
    pub nfa: f64,
    pub abnormal: bool,
}

#[derive(Debug, Serialize)]
pub struct NfaTable {
    pub n: u64,
    pub q: f64,
    pub validated_cells: u64,
    pub epsilon: f64,
    /// Fewest flagged points that make a track of `n` points abnormal.
    pub min_abnormal_k: Option<u64>,
    pub rows: Vec<NfaRow>,
}

pub fn nfa_table_data(n: u64, q: f64, validated_cells: u64, epsilon: f64) -> Result<NfaTable, String> {
    if n == 0 || n > 10_000 {
        return Err("n must be in 1..=10000".into());
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err("epsilon must be > 0".into());
    }
    let rows = (0..=n)
        .map(|k| {
            let tail = binomial_tail(n, k, q).map_err(|e| e.to_string())?;
            let nfa = validated_cells as f64 * tail;
            Ok(NfaRow {
                k,
                tail,
                nfa,
                abnormal: nfa < epsilon,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(NfaTable {
        n,
        q,
        validated_cells,
        epsilon,
        min_abnormal_k: rows.iter().find(|r| r.abnormal).map(|r| r.k),
        rows,
    })
}

#[derive(Debug, Serialize)]
pub struct CapacityView {
    pub window_s: i64,
    pub windows: u64,
    /// `(unique MMSIs, cumulative fraction of windows)`.
    pub cdf: Vec<(u64, f64)>,
    pub readings: Vec<String>,
    pub peak: u64,
    pub cores: u32,
}

/// Unique-MMSI CDF of generated traffic and the cores needed at its peak.
pub fn capacity_data(
    vessels: usize,
    days: f64,
    window_s: i64,
    mean_detection_s: f64,
    seed: u64,
) -> Result<CapacityView, String> {
    if !(days > 0.0 && days <= 30.0) {
        return Err("days must be in (0, 30]".into());
    }
    let s = SyntheticScenario {
        vessels,
        duration_s: (days * 86_400.0) as i64,
        seed,
        ..SyntheticScenario::default()
    };
    let traffic = generate(&s).map_err(|e| e.to_string())?;
    let curve = unique_mmsi_cdf(&traffic.messages, window_s).map_err(|e| e.to_string())?;
    let peak = curve.peak();
    let cores = capacity_estimate(peak.max(1), mean_detection_s, window_s as f64).map_err(|e| e.to_string())?;
    Ok(CapacityView {
        window_s,
        windows: curve.windows,
        readings: if curve.windows > 0 {
            vec![curve.reading(0.8), curve.reading(0.9)]
        } else {
            Vec::new()
        },
        cdf: curve.points.iter().map(|p| (p.unique_mmsi, p.fraction)).collect(),
        peak,
        cores,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn detection_map(
    train_vessels: usize,
    test_clean: usize,
    test_anomalous: usize,
    q: f64,
    min_cell_count: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(detection_map_data(
        train_vessels,
        test_clean,
        test_anomalous,
        q,
        min_cell_count as u64,
        seed as u64,
    ))
}

#[wasm_bindgen]
pub fn nfa_table(n: u32, q: f64, validated_cells: u32, epsilon: f64) -> Result<String, JsError> {
    to_js(nfa_table_data(n as u64, q, validated_cells as u64, epsilon))
}

#[wasm_bindgen]
pub fn capacity(vessels: usize, days: f64, window_s: u32, mean_detection_s: f64, seed: u32) -> Result<String, JsError> {
    to_js(capacity_data(
        vessels,
        days,
        window_s as i64,
        mean_detection_s,
        seed as u64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_finds_injected_anomalies() {
        let m = detection_map_data(90, 12, 6, 0.05, 50, 3).unwrap();
        assert_eq!(m.injected, 6);
        assert!(m.detected >= 5, "{} of 6", m.detected);
        assert!(m.clean_flagged <= 2);
        assert!(m.cells.iter().any(|c| c.validated));
        for t in &m.tracks {
            assert_eq!(t.path.len(), t.n);
            assert_eq!(t.flags.iter().filter(|&&f| f).count(), t.k);
        }
        assert!(detection_map_data(90, 12, 6, 1.5, 50, 3).is_err());
    }

    #[test]
    fn nfa_threshold_row() {
        let t = nfa_table_data(25, 0.05, 100, 1.0).unwrap();
        assert_eq!(t.rows.len(), 26);
        assert_eq!(t.rows[0].tail, 1.0);
        let k = t.min_abnormal_k.unwrap();
        // first k whose NFA drops below epsilon, and it stays below afterwards
        assert!(t.rows[k as usize].nfa < 1.0 && t.rows[k as usize - 1].nfa >= 1.0);
        assert!(t.rows[k as usize..].iter().all(|r| r.abnormal));
        assert!(nfa_table_data(0, 0.05, 1, 1.0).is_err());
    }

    #[test]
    fn capacity_view() {
        let c = capacity_data(30, 1.0, 600, 2.07, 1).unwrap();
        // departures cover one day, voyages run past it
        assert!(c.windows >= 144);
        assert_eq!(c.cdf.last().unwrap().1, 1.0);
        assert_eq!(c.peak, c.cdf.last().unwrap().0);
        assert_eq!(c.cores, capacity_estimate(c.peak, 2.07, 600.0).unwrap());
        assert_eq!(c.readings.len(), 2);
    }
}

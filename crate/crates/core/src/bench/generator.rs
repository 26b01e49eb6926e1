//! Parametric lane-traffic generator with labelled anomaly injection.
//!
//! Geometry is done on an equirectangular plane in nautical miles around the
//! centre of the region, so straight legs stay straight in (lat, lon).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::domain::{normalize_course, AisMessage, Mmsi, Roi, Source, TrackId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// Two full turns on a small circle.
    Loop,
    /// Engine stop: the vessel holds position for a while.
    Stop,
    /// Detour far off the lane and back.
    OffLane,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Loop => "loop",
            AnomalyKind::Stop => "stop",
            AnomalyKind::OffLane => "off-lane",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loop" => Ok(AnomalyKind::Loop),
            "stop" => Ok(AnomalyKind::Stop),
            "off-lane" => Ok(AnomalyKind::OffLane),
            _ => Err(format!("unknown anomaly type {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    /// `(lat, lon)` waypoints, at least two.
    pub waypoints: Vec<(f64, f64)>,
    pub speed_knots: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyInjection {
    pub kind: AnomalyKind,
    /// Share of all vessels receiving this anomaly.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticScenario {
    pub roi: Roi,
    pub lanes: Vec<Lane>,
    /// Departures over the scenario, assigned to lanes round-robin and spread
    /// uniformly over `[start_time, start_time + duration_s)`.
    pub vessels: usize,
    pub start_time: i64,
    pub duration_s: i64,
    pub report_interval_s: i64,
    /// Report times jitter uniformly by up to this many seconds.
    pub jitter_s: i64,
    /// Per-vessel lateral offset from the lane axis.
    pub cross_track_sigma_nm: f64,
    /// Per-report position noise.
    pub position_sigma_nm: f64,
    /// Per-vessel deviation from the lane speed.
    pub vessel_speed_sigma_knots: f64,
    /// Per-report speed noise.
    pub speed_sigma_knots: f64,
    /// Per-report course noise.
    pub course_sigma_deg: f64,
    pub anomalies: Vec<AnomalyInjection>,
    pub mmsi_base: Mmsi,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            roi: Roi {
                lat_min: 47.5,
                lat_max: 49.5,
                lon_min: -7.0,
                lon_max: -4.0,
            },
            // lanes run along cell centres of the default 0.1 degree grid
            lanes: vec![
                Lane {
                    waypoints: vec![(47.65, -6.45), (49.35, -6.45)],
                    speed_knots: 10.0,
                },
                Lane {
                    waypoints: vec![(48.05, -6.15), (48.05, -4.25)],
                    speed_knots: 10.0,
                },
                Lane {
                    waypoints: vec![(49.35, -4.35), (48.55, -4.35), (48.55, -5.85)],
                    speed_knots: 9.0,
                },
            ],
            vessels: 150,
            start_time: 1_490_000_000,
            duration_s: 3 * 86_400,
            report_interval_s: 60,
            jitter_s: 10,
            cross_track_sigma_nm: 0.3,
            position_sigma_nm: 0.05,
            vessel_speed_sigma_knots: 0.25,
            speed_sigma_knots: 0.15,
            course_sigma_deg: 2.0,
            anomalies: Vec::new(),
            mmsi_base: 227_000_000,
            seed: 1,
        }
    }
}

impl SyntheticScenario {
    /// Three-lane traffic scenario used by the quality checks: `clean` normal
    /// vessels plus `anomalous` vessels split evenly over loop, stop and off-lane.
    pub fn three_lanes(clean: usize, anomalous: usize, seed: u64) -> Self {
        let total = clean + anomalous;
        let share = |i: usize| {
            let n = anomalous / 3 + usize::from(i < anomalous % 3);
            n as f64 / total as f64
        };
        SyntheticScenario {
            vessels: total,
            duration_s: 10 * 86_400,
            anomalies: [AnomalyKind::Loop, AnomalyKind::Stop, AnomalyKind::OffLane]
                .iter()
                .enumerate()
                .filter(|(i, _)| share(*i) > 0.0)
                .map(|(i, &kind)| AnomalyInjection {
                    kind,
                    fraction: share(i),
                })
                .collect(),
            seed,
            ..SyntheticScenario::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidScenario(m));
        self.roi
            .validate()
            .map_err(|e| BenchError::InvalidScenario(e.to_string()))?;
        if self.vessels > 0 && self.lanes.is_empty() {
            return bad("vessels need at least one lane".into());
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.waypoints.len() < 2 {
                return bad(format!("lane {i} needs at least two waypoints"));
            }
            if !(lane.speed_knots > 0.0 && lane.speed_knots.is_finite()) {
                return bad(format!("lane {i} speed must be > 0"));
            }
            if lane.waypoints.iter().any(|&(la, lo)| !self.roi.contains(la, lo)) {
                return bad(format!("lane {i} leaves the region"));
            }
        }
        if self.duration_s <= 0 || self.report_interval_s <= 0 {
            return bad("duration_s and report_interval_s must be > 0".into());
        }
        if self.jitter_s < 0 || self.jitter_s >= self.report_interval_s {
            return bad("jitter_s must be in [0, report_interval_s)".into());
        }
        for (name, v) in [
            ("cross_track_sigma_nm", self.cross_track_sigma_nm),
            ("position_sigma_nm", self.position_sigma_nm),
            ("vessel_speed_sigma_knots", self.vessel_speed_sigma_knots),
            ("speed_sigma_knots", self.speed_sigma_knots),
            ("course_sigma_deg", self.course_sigma_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        let mut total = 0.0;
        for a in &self.anomalies {
            if !(0.0..=1.0).contains(&a.fraction) {
                return bad(format!("anomaly fraction {} outside [0, 1]", a.fraction));
            }
            total += a.fraction;
        }
        if total > 1.0 + 1e-9 {
            return bad("anomaly fractions sum above 1".into());
        }
        if self.mmsi_base == 0 || self.mmsi_base as u64 + self.vessels as u64 > crate::domain::MAX_MMSI as u64 {
            return bad("MMSI range out of bounds".into());
        }
        Ok(())
    }
}

/// What the generator knows about one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTruth {
    pub mmsi: Mmsi,
    pub lane: usize,
    pub anomaly: Option<AnomalyKind>,
    pub first_report: i64,
    pub last_report: i64,
    pub reports: usize,
}

impl VesselTruth {
    pub fn track_id(&self) -> TrackId {
        TrackId {
            mmsi: self.mmsi,
            start: self.first_report,
        }
    }

    pub fn duration(&self) -> i64 {
        self.last_report - self.first_report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTraffic {
    /// Sorted by `(timestamp, mmsi)`.
    pub messages: Vec<AisMessage>,
    pub vessels: Vec<VesselTruth>,
}

impl GeneratedTraffic {
    pub fn anomalous(&self) -> impl Iterator<Item = &VesselTruth> {
        self.vessels.iter().filter(|v| v.anomaly.is_some())
    }

    /// Ground-truth sidecar: `track_id,anomaly_type` for injected anomalies.
    pub fn ground_truth_csv(&self) -> String {
        let mut out = String::from("track_id,anomaly_type\n");
        for v in self.anomalous() {
            out.push_str(&format!("{},{}\n", v.track_id(), v.anomaly.expect("filtered")));
        }
        out
    }

    /// Messages of the selected vessels only.
    pub fn messages_of(&self, keep: impl Fn(&VesselTruth) -> bool) -> Vec<AisMessage> {
        let chosen: std::collections::HashSet<Mmsi> = self.vessels.iter().filter(|v| keep(v)).map(|v| v.mmsi).collect();
        self.messages
            .iter()
            .filter(|m| chosen.contains(&m.mmsi))
            .copied()
            .collect()
    }
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<(TrackId, AnomalyKind)>, BenchError> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, kind) = l
                .split_once(',')
                .ok_or_else(|| BenchError::Parse(format!("bad ground-truth line {l:?}")))?;
            Ok((
                id.parse().map_err(BenchError::Parse)?,
                kind.trim().parse().map_err(BenchError::Parse)?,
            ))
        })
        .collect()
}

type Xy = (f64, f64);

/// Equirectangular projection around a reference latitude/longitude.
#[derive(Debug, Clone, Copy)]
struct Plane {
    lat0: f64,
    lon0: f64,
    cos_lat0: f64,
}

impl Plane {
    fn new(roi: &Roi) -> Self {
        let lat0 = (roi.lat_min + roi.lat_max) / 2.0;
        Plane {
            lat0,
            lon0: (roi.lon_min + roi.lon_max) / 2.0,
            cos_lat0: lat0.to_radians().cos(),
        }
    }

    fn to_xy(self, lat: f64, lon: f64) -> Xy {
        ((lon - self.lon0) * 60.0 * self.cos_lat0, (lat - self.lat0) * 60.0)
    }

    fn to_latlon(self, (x, y): Xy) -> (f64, f64) {
        (self.lat0 + y / 60.0, self.lon0 + x / (60.0 * self.cos_lat0))
    }
}

fn sub(a: Xy, b: Xy) -> Xy {
    (a.0 - b.0, a.1 - b.1)
}

fn add(a: Xy, b: Xy) -> Xy {
    (a.0 + b.0, a.1 + b.1)
}

fn scale(a: Xy, s: f64) -> Xy {
    (a.0 * s, a.1 * s)
}

fn norm(a: Xy) -> f64 {
    a.0.hypot(a.1)
}

fn unit(a: Xy) -> Xy {
    scale(a, 1.0 / norm(a))
}

/// Left-hand normal of a direction.
fn left(d: Xy) -> Xy {
    (-d.1, d.0)
}

/// Compass bearing of a direction in the (east, north) plane.
fn bearing(d: Xy) -> f64 {
    normalize_course(d.0.atan2(d.1).to_degrees())
}

#[derive(Debug, Clone, Copy)]
enum Leg {
    Line {
        from: Xy,
        to: Xy,
        speed: f64,
    },
    Hold {
        at: Xy,
        duration_s: f64,
    },
    Circle {
        center: Xy,
        radius: f64,
        start_angle: f64,
        turns: f64,
        speed: f64,
    },
}

impl Leg {
    fn duration_s(&self) -> f64 {
        match *self {
            Leg::Line { from, to, speed } => norm(sub(to, from)) / speed * 3600.0,
            Leg::Hold { duration_s, .. } => duration_s,
            Leg::Circle {
                radius, turns, speed, ..
            } => 2.0 * std::f64::consts::PI * radius * turns / speed * 3600.0,
        }
    }

    /// Position, speed and course `elapsed` seconds into the leg. Course is
    /// `None` while holding.
    fn at(&self, elapsed: f64) -> (Xy, f64, Option<f64>) {
        match *self {
            Leg::Line { from, to, speed } => {
                let d = sub(to, from);
                let f = (elapsed / self.duration_s()).clamp(0.0, 1.0);
                (add(from, scale(d, f)), speed, Some(bearing(d)))
            }
            Leg::Hold { at, .. } => (at, 0.0, None),
            Leg::Circle {
                center,
                radius,
                start_angle,
                speed,
                ..
            } => {
                // counter-clockwise in the plane
                let omega = speed / 3600.0 / radius;
                let a = start_angle + omega * elapsed;
                let pos = add(center, (radius * a.cos(), radius * a.sin()));
                let tangent = (-a.sin(), a.cos());
                (pos, speed, Some(bearing(tangent)))
            }
        }
    }
}

/// Lane polyline shifted sideways by `offset` nm.
fn offset_polyline(points: &[Xy], offset: f64) -> Vec<Xy> {
    (0..points.len())
        .map(|i| {
            let seg = if i + 1 < points.len() {
                sub(points[i + 1], points[i])
            } else {
                sub(points[i], points[i - 1])
            };
            add(points[i], scale(left(unit(seg)), offset))
        })
        .collect()
}

/// Point and direction at arc length `s`, plus the index of the segment.
fn along(points: &[Xy], s: f64) -> (Xy, Xy, usize) {
    let mut rest = s;
    for i in 0..points.len() - 1 {
        let d = sub(points[i + 1], points[i]);
        let len = norm(d);
        if rest <= len || i == points.len() - 2 {
            let u = unit(d);
            return (add(points[i], scale(u, rest.min(len))), u, i);
        }
        rest -= len;
    }
    unreachable!("polyline has at least two points")
}

fn length(points: &[Xy]) -> f64 {
    points.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
}

fn lines(points: &[Xy], speed: f64) -> Vec<Leg> {
    points
        .windows(2)
        .filter(|w| norm(sub(w[1], w[0])) > 0.0)
        .map(|w| Leg::Line {
            from: w[0],
            to: w[1],
            speed,
        })
        .collect()
}

/// Lane legs up to arc length `s_a`, the anomaly legs, then the lane from `s_b`.
fn route_with_anomaly(route: &[Xy], speed: f64, kind: AnomalyKind, s_a: f64) -> Vec<Leg> {
    let (p_a, dir, seg_a) = along(route, s_a);
    let mut head: Vec<Xy> = route[..=seg_a].to_vec();
    head.push(p_a);
    let mut legs = lines(&head, speed);
    let s_b = match kind {
        AnomalyKind::Stop => {
            legs.push(Leg::Hold {
                at: p_a,
                duration_s: 2.5 * 3600.0,
            });
            s_a
        }
        AnomalyKind::Loop => {
            let radius = 1.2;
            let center = add(p_a, scale(left(dir), radius));
            let to_p = sub(p_a, center);
            legs.push(Leg::Circle {
                center,
                radius,
                start_angle: to_p.1.atan2(to_p.0),
                turns: 3.0,
                speed,
            });
            s_a
        }
        AnomalyKind::OffLane => {
            let (out, run) = (8.0, 8.0);
            let p1 = add(add(p_a, scale(dir, out)), scale(left(dir), out));
            let p2 = add(p1, scale(dir, run));
            let s_b = s_a + 2.0 * out + run;
            let (p_b, _, _) = along(route, s_b);
            legs.extend(lines(&[p_a, p1, p2, p_b], speed));
            s_b
        }
    };
    let (p_b, _, seg_b) = along(route, s_b);
    let mut tail = vec![p_b];
    tail.extend_from_slice(&route[seg_b + 1..]);
    legs.extend(lines(&tail, speed));
    legs
}

/// Generates lane-following traffic; deterministic in the scenario seed.
pub fn generate(scenario: &SyntheticScenario) -> Result<GeneratedTraffic, BenchError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let plane = Plane::new(&scenario.roi);
    let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("sigma validated >= 0");

    // anomaly assignment: distinct vessels drawn without replacement
    let mut order: Vec<usize> = (0..scenario.vessels).collect();
    order.shuffle(&mut rng);
    let mut labels: Vec<Option<AnomalyKind>> = vec![None; scenario.vessels];
    let mut next = 0;
    for inj in &scenario.anomalies {
        let n = (inj.fraction * scenario.vessels as f64).round() as usize;
        for &v in order.iter().skip(next).take(n) {
            labels[v] = Some(inj.kind);
        }
        next += n;
    }

    let lanes_xy: Vec<Vec<Xy>> = scenario
        .lanes
        .iter()
        .map(|l| l.waypoints.iter().map(|&(la, lo)| plane.to_xy(la, lo)).collect())
        .collect();

    let mut messages = Vec::new();
    let mut vessels = Vec::with_capacity(scenario.vessels);
    for (v, &label) in labels.iter().enumerate() {
        let lane_idx = v % scenario.lanes.len();
        let lane = &scenario.lanes[lane_idx];
        let mmsi = scenario.mmsi_base + v as Mmsi;
        let depart = scenario.start_time + rng.random_range(0..scenario.duration_s);
        let offset = gauss(scenario.cross_track_sigma_nm).sample(&mut rng);
        let speed = (lane.speed_knots + gauss(scenario.vessel_speed_sigma_knots).sample(&mut rng)).max(1.0);
        let route = offset_polyline(&lanes_xy[lane_idx], offset);
        let total = length(&route);
        let legs = match label {
            None => lines(&route, speed),
            Some(kind) => {
                let s_a = total * rng.random_range(0.3..0.45);
                route_with_anomaly(&route, speed, kind, s_a)
            }
        };

        let end = legs.iter().map(Leg::duration_s).sum::<f64>();
        let mut leg_start = 0.0;
        let mut leg = 0;
        let mut nominal = 0i64;
        let mut first = None;
        let mut last = 0;
        let mut reports = 0;
        loop {
            let jitter = if scenario.jitter_s > 0 {
                rng.random_range(-scenario.jitter_s..=scenario.jitter_s)
            } else {
                0
            };
            let rel = (nominal + jitter).max(0) as f64;
            if nominal as f64 > end {
                break;
            }
            let rel = rel.min(end);
            while leg + 1 < legs.len() && rel > leg_start + legs[leg].duration_s() {
                leg_start += legs[leg].duration_s();
                leg += 1;
            }
            let (pos, sog, cog) = legs[leg].at(rel - leg_start);
            let noisy = add(
                pos,
                (
                    gauss(scenario.position_sigma_nm).sample(&mut rng),
                    gauss(scenario.position_sigma_nm).sample(&mut rng),
                ),
            );
            let (lat, lon) = plane.to_latlon(noisy);
            let (sog, cog) = match cog {
                Some(c) => (
                    (sog + gauss(scenario.speed_sigma_knots).sample(&mut rng)).max(0.0),
                    c + gauss(scenario.course_sigma_deg).sample(&mut rng),
                ),
                None => (rng.random_range(0.0..0.4), rng.random_range(0.0..360.0)),
            };
            let ts = depart + rel.round() as i64;
            if first.is_none_or(|_| ts > last) && scenario.roi.contains(lat, lon) {
                let msg = AisMessage::new(mmsi, ts, lat, lon, sog, cog)
                    .map_err(|e| BenchError::InvalidScenario(e.to_string()))?
                    .with_source(Source::Terrestrial);
                messages.push(msg);
                first.get_or_insert(ts);
                last = ts;
                reports += 1;
            }
            nominal += scenario.report_interval_s;
        }
        if let Some(first) = first {
            vessels.push(VesselTruth {
                mmsi,
                lane: lane_idx,
                anomaly: label,
                first_report: first,
                last_report: last,
                reports,
            });
        }
    }
    messages.sort_by_key(|m| (m.timestamp, m.mmsi));
    Ok(GeneratedTraffic { messages, vessels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::render_record;
    use crate::preprocess::{resample, PreprocessConfig};

    #[test]
    fn zero_vessels_is_empty() {
        let s = SyntheticScenario {
            vessels: 0,
            ..SyntheticScenario::default()
        };
        let g = generate(&s).unwrap();
        assert!(g.messages.is_empty() && g.vessels.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = SyntheticScenario {
            vessels: 8,
            anomalies: vec![AnomalyInjection {
                kind: AnomalyKind::Loop,
                fraction: 0.25,
            }],
            ..SyntheticScenario::default()
        };
        let render = |g: &GeneratedTraffic| g.messages.iter().map(render_record).collect::<Vec<_>>().join("\n");
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(render(&a), render(&b));
        assert_eq!(a.ground_truth_csv(), b.ground_truth_csv());
        let other = generate(&SyntheticScenario { seed: 2, ..s }).unwrap();
        assert_ne!(render(&a), render(&other));
    }

    #[test]
    fn clean_lane_without_noise_stays_on_the_line() {
        let (a, b) = ((48.0, -6.5), (49.0, -5.0));
        let s = SyntheticScenario {
            lanes: vec![Lane {
                waypoints: vec![a, b],
                speed_knots: 12.0,
            }],
            vessels: 3,
            jitter_s: 0,
            cross_track_sigma_nm: 0.0,
            position_sigma_nm: 0.0,
            vessel_speed_sigma_knots: 0.0,
            speed_sigma_knots: 0.0,
            course_sigma_deg: 0.0,
            ..SyntheticScenario::default()
        };
        let g = generate(&s).unwrap();
        let cfg = PreprocessConfig::default();
        for v in &g.vessels {
            let pts: Vec<_> = g.messages.iter().filter(|m| m.mmsi == v.mmsi).copied().collect();
            let r = resample(&crate::domain::Track::new(v.mmsi, pts), cfg.resample_period_s).unwrap();
            for p in &r.points {
                // cross product of (p - a) and (b - a) in degree space
                let cross = (p.lat - a.0) * (b.1 - a.1) - (p.lon - a.1) * (b.0 - a.0);
                assert!(cross.abs() < 1e-9, "{cross}");
                assert!((p.sog - 12.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn anomaly_labels_and_sidecar() {
        let s = SyntheticScenario::three_lanes(30, 6, 3);
        let g = generate(&s).unwrap();
        let mut kinds: Vec<_> = g.anomalous().map(|v| v.anomaly.unwrap()).collect();
        kinds.sort();
        assert_eq!(
            kinds,
            vec![
                AnomalyKind::Loop,
                AnomalyKind::Loop,
                AnomalyKind::Stop,
                AnomalyKind::Stop,
                AnomalyKind::OffLane,
                AnomalyKind::OffLane
            ]
        );
        let parsed = parse_ground_truth(&g.ground_truth_csv()).unwrap();
        assert_eq!(parsed.len(), 6);
        assert!(parsed
            .iter()
            .all(|(id, _)| g.vessels.iter().any(|v| v.track_id() == *id)));
        assert!(g.messages.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(g.messages.iter().all(|m| s.roi.contains(m.lat, m.lon) && m.sog < 30.0));
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = SyntheticScenario::default();
        s.lanes[0].waypoints = vec![(10.0, 10.0), (48.0, -5.0)];
        assert!(generate(&s).is_err());
        let s = SyntheticScenario {
            anomalies: vec![AnomalyInjection {
                kind: AnomalyKind::Stop,
                fraction: 1.5,
            }],
            ..SyntheticScenario::default()
        };
        assert!(s.validate().is_err());
    }
}

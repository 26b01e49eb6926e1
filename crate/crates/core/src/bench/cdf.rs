use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::domain::AisMessage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub unique_mmsi: u64,
    /// Share of windows with at most `unique_mmsi` distinct vessels.
    pub fraction: f64,
}

/// Empirical CDF of distinct MMSIs per fixed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub window_s: i64,
    pub windows: u64,
    pub points: Vec<CdfPoint>,
}

impl CdfCurve {
    pub fn peak(&self) -> u64 {
        self.points.last().map_or(0, |p| p.unique_mmsi)
    }

    pub fn fraction_at_most(&self, n: u64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.unique_mmsi <= n)
            .last()
            .map_or(0.0, |p| p.fraction)
    }

    /// Smallest count `c` with `F(c) >= p`.
    pub fn quantile(&self, p: f64) -> u64 {
        self.points
            .iter()
            .find(|pt| pt.fraction >= p - 1e-12)
            .map_or(0, |pt| pt.unique_mmsi)
    }

    /// "X% of windows have < N unique MMSIs" for the smallest N covering `p`.
    pub fn reading(&self, p: f64) -> String {
        let n = self.quantile(p) + 1;
        format!(
            "{}% of windows have < {} unique MMSIs",
            (self.fraction_at_most(n - 1) * 100.0).round(),
            n
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# window_s={} windows={}\nunique_mmsi,fraction\n",
            self.window_s, self.windows
        );
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.unique_mmsi, p.fraction));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let bad = |m: &str| BenchError::Parse(format!("cdf csv: {m}"));
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty"))?;
        let mut window_s = None;
        let mut windows = None;
        for kv in head.trim_start_matches('#').split_whitespace() {
            match kv.split_once('=') {
                Some(("window_s", v)) => window_s = v.parse().ok(),
                Some(("windows", v)) => windows = v.parse().ok(),
                _ => return Err(bad("bad header")),
            }
        }
        if lines.next() != Some("unique_mmsi,fraction") {
            return Err(bad("missing column header"));
        }
        let points = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (u, f) = l.split_once(',').ok_or_else(|| bad(l))?;
                Ok(CdfPoint {
                    unique_mmsi: u.parse().map_err(|_| bad(l))?,
                    fraction: f.parse().map_err(|_| bad(l))?,
                })
            })
            .collect::<Result<_, BenchError>>()?;
        Ok(CdfCurve {
            window_s: window_s.ok_or_else(|| bad("window_s"))?,
            windows: windows.ok_or_else(|| bad("windows"))?,
            points,
        })
    }
}

/// Windows are anchored at `floor(first / window_s) * window_s` and run to the
/// last message; windows without traffic count as zero.
pub fn unique_mmsi_cdf(messages: &[AisMessage], window_s: i64) -> Result<CdfCurve, BenchError> {
    if window_s <= 0 {
        return Err(BenchError::Domain {
            field: "window_s",
            value: window_s as f64,
        });
    }
    let (Some(first), Some(last)) = (
        messages.iter().map(|m| m.timestamp).min(),
        messages.iter().map(|m| m.timestamp).max(),
    ) else {
        return Ok(CdfCurve {
            window_s,
            windows: 0,
            points: Vec::new(),
        });
    };
    let origin = first.div_euclid(window_s) * window_s;
    let n_windows = ((last - origin) / window_s + 1) as u64;
    let mut pairs: Vec<(i64, u32)> = messages
        .iter()
        .map(|m| ((m.timestamp - origin) / window_s, m.mmsi))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut per_window: BTreeMap<i64, u64> = BTreeMap::new();
    for (w, _) in pairs {
        *per_window.entry(w).or_default() += 1;
    }
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    let empty = n_windows - per_window.len() as u64;
    if empty > 0 {
        hist.insert(0, empty);
    }
    for c in per_window.into_values() {
        *hist.entry(c).or_default() += 1;
    }
    let mut cum = 0;
    let points = hist
        .into_iter()
        .map(|(unique_mmsi, n)| {
            cum += n;
            CdfPoint {
                unique_mmsi,
                fraction: cum as f64 / n_windows as f64,
            }
        })
        .collect();
    Ok(CdfCurve {
        window_s,
        windows: n_windows,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn m(mmsi: u32, t: i64) -> AisMessage {
        AisMessage::new(mmsi, t, 48.0, -5.0, 10.0, 0.0).unwrap()
    }

    /// Brute force: scan every window and count distinct MMSIs in it.
    fn oracle(msgs: &[AisMessage], w: i64) -> Vec<u64> {
        let first = msgs.iter().map(|m| m.timestamp).min().unwrap();
        let last = msgs.iter().map(|m| m.timestamp).max().unwrap();
        let mut start = first - first.rem_euclid(w);
        let mut out = Vec::new();
        while start <= last {
            let set: HashSet<u32> = msgs
                .iter()
                .filter(|m| m.timestamp >= start && m.timestamp < start + w)
                .map(|m| m.mmsi)
                .collect();
            out.push(set.len() as u64);
            start += w;
        }
        out
    }

    #[test]
    fn worked_example() {
        let msgs = [m(1, 0), m(2, 10), m(1, 20), m(3, 1250), m(1, 1300), m(2, 1799)];
        let c = unique_mmsi_cdf(&msgs, 600).unwrap();
        // windows: {1,2}, {}, {3,1,2}
        assert_eq!(c.windows, 3);
        let pts: Vec<_> = c.points.iter().map(|p| (p.unique_mmsi, p.fraction)).collect();
        assert_eq!(pts, vec![(0, 1.0 / 3.0), (2, 2.0 / 3.0), (3, 1.0)]);
        assert_eq!(c.peak(), 3);
        assert_eq!(c.reading(0.6), "67% of windows have < 3 unique MMSIs");
    }

    #[test]
    fn empty_input() {
        let c = unique_mmsi_cdf(&[], 600).unwrap();
        assert_eq!((c.windows, c.peak()), (0, 0));
        assert!(unique_mmsi_cdf(&[], 0).is_err());
    }

    #[test]
    fn negative_times_anchor_down() {
        let c = unique_mmsi_cdf(&[m(1, -5), m(2, 5)], 10).unwrap();
        assert_eq!(c.windows, 2);
    }

    #[test]
    fn csv_round_trip() {
        let msgs = [m(1, 0), m(2, 10), m(3, 700)];
        let c = unique_mmsi_cdf(&msgs, 600).unwrap();
        assert_eq!(CdfCurve::from_csv(&c.to_csv()).unwrap(), c);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in prop::collection::vec((1u32..20, -5000i64..5000), 1..150),
            w in 1i64..900,
        ) {
            let msgs: Vec<_> = raw.iter().map(|&(id, t)| m(id, t)).collect();
            let c = unique_mmsi_cdf(&msgs, w).unwrap();
            let counts = oracle(&msgs, w);
            prop_assert_eq!(c.windows, counts.len() as u64);
            for p in &c.points {
                let le = counts.iter().filter(|&&x| x <= p.unique_mmsi).count();
                prop_assert_eq!(p.fraction, le as f64 / counts.len() as f64);
            }
            prop_assert_eq!(c.peak(), *counts.iter().max().unwrap());
            prop_assert!(c.points.windows(2).all(|p| p[0].fraction < p[1].fraction));
            prop_assert_eq!(c.points.last().unwrap().fraction, 1.0);
        }
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{binomial_tail, NormalcyError, NormalcyParams, Scorer};
use crate::domain::{Mmsi, Track, TrackId};

/// How per-message flags are turned into a track decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Abnormal when `validated_cells * P[Bin(n, q) >= k] < epsilon`.
    Nfa,
    /// Abnormal when `k / n` exceeds the given ratio.
    FixedRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRule {
    pub q: f64,
    pub epsilon_nfa: f64,
    /// Shortest scorable resampled track.
    pub min_points: usize,
    pub aggregation: Aggregation,
}

impl DetectionRule {
    pub fn new(params: &NormalcyParams, min_points: usize) -> Self {
        DetectionRule {
            q: params.q,
            epsilon_nfa: params.epsilon_nfa,
            min_points,
            aggregation: Aggregation::Nfa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Normal,
    Abnormal,
    InsufficientData,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Normal => "normal",
            Decision::Abnormal => "abnormal",
            Decision::InsufficientData => "insufficient-data",
        })
    }
}

impl std::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Decision::Normal),
            "abnormal" => Ok(Decision::Abnormal),
            "insufficient-data" => Ok(Decision::InsufficientData),
            _ => Err(format!("unknown decision {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageFlag {
    pub score: f64,
    /// Threshold of the message's cell; `None` if the cell is not validated.
    pub threshold: Option<f64>,
    pub abnormal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub track_id: TrackId,
    pub mmsi: Mmsi,
    pub t_start: i64,
    pub t_end: i64,
    pub n: usize,
    pub k: usize,
    pub flags: Vec<MessageFlag>,
    pub nfa: f64,
    pub decision: Decision,
}

/// Flags each message of a resampled track against its cell threshold and
/// aggregates the flags into a track decision.
pub fn detect_track<S: Scorer + ?Sized>(
    scorer: &S,
    track: &Track,
    rule: &DetectionRule,
) -> Result<Verdict, NormalcyError> {
    if track.points.len() < rule.min_points.max(1) {
        return Err(NormalcyError::TrackTooShort {
            points: track.points.len(),
            min: rule.min_points.max(1),
        });
    }
    let mut flags = Vec::with_capacity(track.points.len());
    let mut unvalidated = 0usize;
    for p in &track.points {
        let cell = scorer.cell_of(p)?;
        let score = scorer.score(p)?;
        let threshold = scorer.threshold(cell);
        let abnormal = match threshold {
            Some(tau) => score < tau,
            None => {
                unvalidated += 1;
                true
            }
        };
        flags.push(MessageFlag {
            score,
            threshold,
            abnormal,
        });
    }
    let n = flags.len();
    let k = flags.iter().filter(|f| f.abnormal).count();
    let tail = binomial_tail(n as u64, k as u64, rule.q)?;
    let nfa = scorer.validated_cells() as f64 * tail;
    let decision = if 2 * unvalidated > n {
        Decision::InsufficientData
    } else {
        let abnormal = match rule.aggregation {
            Aggregation::Nfa => nfa < rule.epsilon_nfa,
            Aggregation::FixedRatio(r) => k as f64 / n as f64 > r,
        };
        if abnormal {
            Decision::Abnormal
        } else {
            Decision::Normal
        }
    };
    Ok(Verdict {
        track_id: track.id(),
        mmsi: track.mmsi,
        t_start: track.points[0].timestamp,
        t_end: track.points[n - 1].timestamp,
        n,
        k,
        flags,
        nfa,
        decision,
    })
}

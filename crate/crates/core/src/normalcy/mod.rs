//! Cell-local normalcy model and a-contrario track detection, plus the
//! rule-based geofence check.
//!
//! The model learns, per grid cell, a Laplace-smoothed histogram over
//! (speed bin, course bin). A message is flagged when its log-likelihood falls
//! below the q-quantile of the training scores of its cell, or when its cell has
//! too little training data. A track of `n` messages with `k` flags is abnormal
//! when `validated_cells * P[Bin(n, q) >= k]` drops below `epsilon_nfa`.

mod detect;
mod geofence;
mod model;
mod nfa;
mod persist;

use thiserror::Error;

use crate::domain::DomainError;

pub use detect::{detect_track, Aggregation, Decision, DetectionRule, MessageFlag, Verdict};
pub use geofence::{geofence_check, parse_geojson_zones, GeofenceZone};
pub use model::{NormalcyModel, NormalcyParams, Scorer};
pub use nfa::binomial_tail;
pub use persist::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

#[derive(Debug, Error)]
pub enum NormalcyError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("position ({lat}, {lon}) is outside the model's region")]
    OutOfRoi { lat: f64, lon: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("count array has {found} entries, grid expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("track has {points} points, at least {min} required")]
    TrackTooShort { points: usize, min: usize },
    #[error("geofence: {0}")]
    Geofence(String),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("model file is truncated or its checksum does not match")]
    CorruptChecksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DomainError> for NormalcyError {
    fn from(e: DomainError) -> Self {
        match e {
            DomainError::OutOfRoi { lat, lon } => NormalcyError::OutOfRoi { lat, lon },
            other => NormalcyError::Domain(other.to_string()),
        }
    }
}

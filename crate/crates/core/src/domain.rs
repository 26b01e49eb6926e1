//! Core value types: position reports, the region of interest, tracks, and the
//! spatial/kinematic discretization grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vessel identifier. Nine decimal digits fit in a `u32`.
pub type Mmsi = u32;

/// Largest valid MMSI (nine decimal digits).
pub const MAX_MMSI: Mmsi = 999_999_999;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{field} out of range: {value}")]
    Range { field: &'static str, value: f64 },
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error("position ({lat}, {lon}) is outside the region of interest")]
    OutOfRoi { lat: f64, lon: f64 },
}

/// Reception channel of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Terrestrial,
    Satellite,
    #[default]
    Unknown,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Terrestrial => "terrestrial",
            Source::Satellite => "satellite",
            Source::Unknown => "unknown",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Source::Terrestrial => 1,
            Source::Satellite => 2,
            Source::Unknown => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Source> {
        match code {
            0 => Some(Source::Unknown),
            1 => Some(Source::Terrestrial),
            2 => Some(Source::Satellite),
            _ => None,
        }
    }
}

impl FromStr for Source {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "terrestrial" | "t-ais" | "t" => Ok(Source::Terrestrial),
            "satellite" | "s-ais" | "s" => Ok(Source::Satellite),
            "unknown" | "" => Ok(Source::Unknown),
            _ => Err(()),
        }
    }
}

/// One timestamped position report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisMessage {
    pub mmsi: Mmsi,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Speed over ground, knots.
    pub sog: f64,
    /// Course over ground, degrees in `[0, 360)`.
    pub cog: f64,
    #[serde(default)]
    pub source: Source,
}

impl AisMessage {
    /// Builds a validated report. `cog` is wrapped into `[0, 360)`.
    pub fn new(mmsi: Mmsi, timestamp: i64, lat: f64, lon: f64, sog: f64, cog: f64) -> Result<Self, DomainError> {
        AisMessage {
            mmsi,
            timestamp,
            lat,
            lon,
            sog,
            cog,
            source: Source::Unknown,
        }
        .validated()
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// Checks global ranges and normalizes `cog`.
    pub fn validated(mut self) -> Result<Self, DomainError> {
        if self.mmsi == 0 || self.mmsi > MAX_MMSI {
            return Err(DomainError::Range {
                field: "mmsi",
                value: self.mmsi as f64,
            });
        }
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(DomainError::Range {
                field: "lat",
                value: self.lat,
            });
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(DomainError::Range {
                field: "lon",
                value: self.lon,
            });
        }
        if !self.sog.is_finite() || self.sog < 0.0 {
            return Err(DomainError::Range {
                field: "sog",
                value: self.sog,
            });
        }
        if !self.cog.is_finite() {
            return Err(DomainError::Range {
                field: "cog",
                value: self.cog,
            });
        }
        self.cog = normalize_course(self.cog);
        Ok(self)
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn normalize_course(deg: f64) -> f64 {
    let c = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if c >= 360.0 {
        0.0
    } else {
        c
    }
}

/// Geographic bounding box. Both edges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Roi {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, DomainError> {
        let roi = Roi {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let all_finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(DomainError::InvalidRoi("non-finite bound".into()));
        }
        if self.lat_min >= self.lat_max {
            return Err(DomainError::InvalidRoi(format!(
                "lat_min {} must be below lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        if self.lon_min >= self.lon_max {
            return Err(DomainError::InvalidRoi(format!(
                "lon_min {} must be below lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(DomainError::InvalidRoi("bounds exceed the globe".into()));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }
}

impl FromStr for Roi {
    type Err = DomainError;

    /// Parses `latmin,latmax,lonmin,lonmax`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DomainError::InvalidRoi(format!("{s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c, d] => Roi::new(*a, *b, *c, *d),
            _ => Err(DomainError::InvalidRoi(format!(
                "expected latmin,latmax,lonmin,lonmax, got {s:?}"
            ))),
        }
    }
}

/// Discretization of position and kinematics for the cell-local model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub cell_size_deg: f64,
    pub sog_bin_knots: f64,
    pub sog_cap_knots: f64,
    pub cog_bin_deg: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_size_deg: 0.1,
            sog_bin_knots: 1.0,
            sog_cap_knots: 30.0,
            cog_bin_deg: 10.0,
        }
    }
}

/// `ceil(x)` that tolerates floating-point noise around integers, so that
/// `2.0 / 0.1` counts as 20 rather than 21.
fn snapped_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

const MAX_CELLS: usize = 50_000_000;

impl GridConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.cell_size_deg) {
            return Err(DomainError::InvalidGrid("cell_size_deg must be > 0".into()));
        }
        if !positive(self.sog_bin_knots) {
            return Err(DomainError::InvalidGrid("sog_bin_knots must be > 0".into()));
        }
        if !positive(self.sog_cap_knots) {
            return Err(DomainError::InvalidGrid("sog_cap_knots must be > 0".into()));
        }
        if !positive(self.cog_bin_deg) || self.cog_bin_deg > 360.0 {
            return Err(DomainError::InvalidGrid("cog_bin_deg must be in (0, 360]".into()));
        }
        let bins = 360.0 / self.cog_bin_deg;
        if (bins - bins.round()).abs() > 1e-9 {
            return Err(DomainError::InvalidGrid(format!(
                "cog_bin_deg {} does not divide 360",
                self.cog_bin_deg
            )));
        }
        Ok(())
    }

    /// Validates the grid against a region and reports its shape.
    pub fn shape(&self, roi: &Roi) -> Result<GridShape, DomainError> {
        self.validate()?;
        roi.validate()?;
        let rows = snapped_ceil(roi.lat_span() / self.cell_size_deg).max(1);
        let cols = snapped_ceil(roi.lon_span() / self.cell_size_deg).max(1);
        let cells = rows
            .checked_mul(cols)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| DomainError::InvalidGrid(format!("{rows}x{cols} cells is too many")))?;
        Ok(GridShape {
            rows,
            cols,
            cells,
            sog_bins: self.sog_bins(),
            cog_bins: self.cog_bins(),
        })
    }

    pub fn sog_bins(&self) -> usize {
        snapped_ceil(self.sog_cap_knots / self.sog_bin_knots).max(1)
    }

    pub fn cog_bins(&self) -> usize {
        (360.0 / self.cog_bin_deg).round().max(1.0) as usize
    }

    pub fn kinematic_bins(&self) -> usize {
        self.sog_bins() * self.cog_bins()
    }
}

/// Dimensions of a grid laid over a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    pub sog_bins: usize,
    pub cog_bins: usize,
}

impl GridShape {
    pub fn kinematic_bins(&self) -> usize {
        self.sog_bins * self.cog_bins
    }

    pub fn flat(&self, cell: CellIndex) -> usize {
        cell.row as usize * self.cols + cell.col as usize
    }

    pub fn cell_at(&self, flat: usize) -> CellIndex {
        CellIndex {
            row: (flat / self.cols) as u32,
            col: (flat % self.cols) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: u32,
    pub col: u32,
}

impl CellIndex {
    /// Bounding box `(lat_lo, lat_hi, lon_lo, lon_hi)` of this cell, clipped to the region.
    pub fn bounds(&self, roi: &Roi, grid: &GridConfig) -> (f64, f64, f64, f64) {
        let s = grid.cell_size_deg;
        let lat_lo = roi.lat_min + self.row as f64 * s;
        let lon_lo = roi.lon_min + self.col as f64 * s;
        (
            lat_lo,
            (lat_lo + s).min(roi.lat_max),
            lon_lo,
            (lon_lo + s).min(roi.lon_max),
        )
    }
}

fn axis_index(value: f64, min: f64, size: f64, n: usize) -> u32 {
    let i = ((value - min) / size).floor();
    (i.max(0.0) as usize).min(n - 1) as u32
}

/// Grid cell of a position. Points on the upper edges clamp into the last row/column.
pub fn cell_index(msg: &AisMessage, roi: &Roi, grid: &GridConfig) -> Result<CellIndex, DomainError> {
    let shape = grid.shape(roi)?;
    cell_index_in(msg.lat, msg.lon, roi, grid, &shape)
}

/// `cell_index` with a precomputed shape, for hot loops.
pub fn cell_index_in(
    lat: f64,
    lon: f64,
    roi: &Roi,
    grid: &GridConfig,
    shape: &GridShape,
) -> Result<CellIndex, DomainError> {
    if !roi.contains(lat, lon) {
        return Err(DomainError::OutOfRoi { lat, lon });
    }
    Ok(CellIndex {
        row: axis_index(lat, roi.lat_min, grid.cell_size_deg, shape.rows),
        col: axis_index(lon, roi.lon_min, grid.cell_size_deg, shape.cols),
    })
}

/// Speed and course bins. Speeds above the cap land in the top bin.
pub fn kinematic_bin(msg: &AisMessage, grid: &GridConfig) -> (usize, usize) {
    let sog_bins = grid.sog_bins();
    let cog_bins = grid.cog_bins();
    let sog = msg.sog.max(0.0);
    let sog_bin = ((sog / grid.sog_bin_knots).floor() as usize).min(sog_bins - 1);
    let cog_bin = ((normalize_course(msg.cog) / grid.cog_bin_deg).floor() as usize).min(cog_bins - 1);
    (sog_bin, cog_bin)
}

/// Stable identifier of a track: its vessel and first timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrackId {
    pub mmsi: Mmsi,
    pub start: i64,
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.mmsi, self.start)
    }
}

impl FromStr for TrackId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, t) = s.split_once('-').ok_or_else(|| format!("bad track id {s:?}"))?;
        Ok(TrackId {
            mmsi: m.parse().map_err(|e| format!("bad track id {s:?}: {e}"))?,
            start: t.parse().map_err(|e| format!("bad track id {s:?}: {e}"))?,
        })
    }
}

impl Serialize for TrackId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrackId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Time-ordered reports of one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub mmsi: Mmsi,
    pub points: Vec<AisMessage>,
    /// Closed by a gap or by the end of the stream.
    pub complete: bool,
}

impl Track {
    pub fn new(mmsi: Mmsi, points: Vec<AisMessage>) -> Self {
        Track {
            mmsi,
            points,
            complete: false,
        }
    }

    /// Panics on an empty track.
    pub fn id(&self) -> TrackId {
        TrackId {
            mmsi: self.mmsi,
            start: self.points[0].timestamp,
        }
    }

    pub fn start(&self) -> Option<i64> {
        self.points.first().map(|p| p.timestamp)
    }

    pub fn end(&self) -> Option<i64> {
        self.points.last().map(|p| p.timestamp)
    }

    pub fn duration(&self) -> i64 {
        match (self.start(), self.end()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0].timestamp < w[1].timestamp)
    }
}

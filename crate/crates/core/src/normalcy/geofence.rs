use serde_json::Value;

use super::NormalcyError;
use crate::domain::AisMessage;

/// Forbidden area, vertices as `(lat, lon)` with implicit closure.
#[derive(Debug, Clone, PartialEq)]
pub struct GeofenceZone {
    pub name: String,
    pub polygon: Vec<(f64, f64)>,
}

impl GeofenceZone {
    pub fn new(name: impl Into<String>, mut polygon: Vec<(f64, f64)>) -> Result<Self, NormalcyError> {
        let name = name.into();
        if polygon.len() >= 2 && polygon.first() == polygon.last() {
            polygon.pop();
        }
        if polygon.len() < 3 {
            return Err(NormalcyError::Geofence(format!(
                "zone {name:?} needs at least 3 distinct vertices"
            )));
        }
        if polygon.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(NormalcyError::Geofence(format!(
                "zone {name:?} has non-finite vertices"
            )));
        }
        Ok(GeofenceZone { name, polygon })
    }

    /// Even-odd test; points on an edge count as inside.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let n = self.polygon.len();
        let mut inside = false;
        for i in 0..n {
            let (y1, x1) = self.polygon[i];
            let (y2, x2) = self.polygon[(i + 1) % n];
            if on_segment(lat, lon, y1, x1, y2, x2) {
                return true;
            }
            if (y1 > lat) != (y2 > lat) {
                let x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1);
                if lon < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(py: f64, px: f64, y1: f64, x1: f64, y2: f64, x2: f64) -> bool {
    let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    px >= x1.min(x2) && px <= x1.max(x2) && py >= y1.min(y2) && py <= y1.max(y2)
}

/// Names of the zones containing the message position.
pub fn geofence_check(msg: &AisMessage, zones: &[GeofenceZone]) -> Vec<String> {
    zones
        .iter()
        .filter(|z| z.contains(msg.lat, msg.lon))
        .map(|z| z.name.clone())
        .collect()
}

/// Reads a GeoJSON FeatureCollection of Polygon features (outer rings only)
/// carrying a `name` property.
pub fn parse_geojson_zones(text: &str) -> Result<Vec<GeofenceZone>, NormalcyError> {
    let bad = |m: &str| NormalcyError::Geofence(m.to_string());
    let root: Value = serde_json::from_str(text).map_err(|e| NormalcyError::Geofence(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("top level must be a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array"))?;
    let mut zones = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f.get("geometry").ok_or_else(|| bad("feature without geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(NormalcyError::Geofence(format!("feature {i} is not a Polygon")));
        }
        let name = f
            .get("properties")
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .ok_or_else(|| NormalcyError::Geofence(format!("feature {i} has no name property")))?;
        let ring = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .and_then(|rings| rings.first())
            .and_then(Value::as_array)
            .ok_or_else(|| NormalcyError::Geofence(format!("feature {i} has no outer ring")))?;
        let mut polygon = Vec::with_capacity(ring.len());
        for pos in ring {
            let xy = pos
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| NormalcyError::Geofence(format!("feature {i} has a bad position")))?;
            let lon = xy[0].as_f64().ok_or_else(|| bad("non-numeric coordinate"))?;
            let lat = xy[1].as_f64().ok_or_else(|| bad("non-numeric coordinate"))?;
            polygon.push((lat, lon));
        }
        zones.push(GeofenceZone::new(name, polygon)?);
    }
    Ok(zones)
}

use super::BenchError;

/// Cores needed to score `peak_unique` tracks per `window_s` seconds at
/// `mean_detection_s` seconds each: `max(1, ceil(peak * mean / window))`.
pub fn capacity_estimate(peak_unique: u64, mean_detection_s: f64, window_s: f64) -> Result<u32, BenchError> {
    if peak_unique == 0 {
        return Err(BenchError::Domain {
            field: "peak_unique",
            value: 0.0,
        });
    }
    for (field, value) in [("mean_detection_s", mean_detection_s), ("window_s", window_s)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(BenchError::Domain { field, value });
        }
    }
    let load = peak_unique as f64 * mean_detection_s / window_s;
    // snap values a rounding error away from an integer
    let r = load.round();
    let cores = if (load - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        load.ceil()
    };
    Ok(cores.max(1.0).min(u32::MAX as f64) as u32)
}

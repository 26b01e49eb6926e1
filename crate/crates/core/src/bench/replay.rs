use std::time::{Duration, Instant};

use crate::domain::AisMessage;
use crate::stream::{LogError, PartitionedLog};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayStats {
    pub emitted: u64,
    pub wall_seconds: f64,
}

/// Emits messages in order, pacing them at `speed_factor` times their
/// event-time spacing. An infinite factor replays as fast as possible.
pub fn replay<E>(
    messages: &[AisMessage],
    speed_factor: f64,
    mut sink: impl FnMut(&AisMessage) -> Result<(), E>,
) -> Result<ReplayStats, E> {
    let started = Instant::now();
    let origin = messages.first().map_or(0, |m| m.timestamp);
    let paced = speed_factor.is_finite() && speed_factor > 0.0;
    for m in messages {
        if paced {
            let due = Duration::from_secs_f64(((m.timestamp - origin).max(0) as f64) / speed_factor);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        sink(m)?;
    }
    Ok(ReplayStats {
        emitted: messages.len() as u64,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Replays into a log keyed by MMSI and closes it afterwards.
pub fn replay_into_log(
    messages: &[AisMessage],
    speed_factor: f64,
    log: &PartitionedLog,
) -> Result<ReplayStats, LogError> {
    let stats = replay(messages, speed_factor, |m| log.publish(m.mmsi, m).map(|_| ()))?;
    log.close()?;
    Ok(stats)
}

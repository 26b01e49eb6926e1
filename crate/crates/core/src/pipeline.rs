//! Batch training and detection over finite message sets.

use crate::domain::{AisMessage, GridConfig};
use crate::normalcy::{detect_track, DetectionRule, NormalcyError, NormalcyModel, NormalcyParams, Scorer, Verdict};
use crate::preprocess::{build_tracks, BatchOutput, PreprocessConfig};

/// Builds tracks from `messages` and fits a model on the resampled tracks that
/// pass preprocessing.
pub fn train(
    messages: &[AisMessage],
    cfg: &PreprocessConfig,
    grid: GridConfig,
    params: NormalcyParams,
) -> Result<(NormalcyModel, BatchOutput), NormalcyError> {
    let batch = build_tracks(messages, cfg);
    let tracks = batch.tested_tracks(cfg);
    if tracks.is_empty() {
        return Err(NormalcyError::EmptyTrainingSet);
    }
    let model = NormalcyModel::fit(&tracks, cfg.roi, grid, params)?;
    Ok((model, batch))
}

/// One verdict per tested track, each scored over the whole resampled track.
pub fn detect_batch<S: Scorer + ?Sized>(
    scorer: &S,
    messages: &[AisMessage],
    cfg: &PreprocessConfig,
    rule: &DetectionRule,
) -> Result<(Vec<Verdict>, BatchOutput), NormalcyError> {
    let batch = build_tracks(messages, cfg);
    let verdicts = batch
        .tested_tracks(cfg)
        .iter()
        .map(|t| detect_track(scorer, t, rule))
        .collect::<Result<_, _>>()?;
    Ok((verdicts, batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, SyntheticScenario};

    #[test]
    fn empty_training_set() {
        let cfg = PreprocessConfig::default();
        let r = train(&[], &cfg, GridConfig::default(), NormalcyParams::default());
        assert!(matches!(r, Err(NormalcyError::EmptyTrainingSet)));
    }

    #[test]
    fn train_then_detect() {
        let g = generate(&SyntheticScenario {
            vessels: 12,
            ..SyntheticScenario::default()
        })
        .unwrap();
        let cfg = PreprocessConfig::default();
        let (model, batch) = train(&g.messages, &cfg, GridConfig::default(), NormalcyParams::default()).unwrap();
        assert!(batch.counts.tested > 0);
        let rule = DetectionRule::new(&model.params, cfg.min_points());
        let (verdicts, batch2) = detect_batch(&model, &g.messages, &cfg, &rule).unwrap();
        assert_eq!(verdicts.len() as u64, batch2.counts.tested);
        assert!(verdicts.iter().all(|v| v.n == v.flags.len()));
    }
}

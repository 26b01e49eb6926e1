use serde::{Deserialize, Serialize};

use super::NormalcyError;
use crate::domain::{cell_index_in, kinematic_bin, AisMessage, GridConfig, GridShape, Roi, Track};

/// Hyper-parameters of the histogram model and the detection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalcyParams {
    /// Laplace pseudo-count.
    pub alpha: f64,
    /// Per-message quantile level of the cell thresholds.
    pub q: f64,
    /// Training messages a cell needs before it is validated.
    pub min_cell_count: u64,
    pub epsilon_nfa: f64,
}

impl Default for NormalcyParams {
    fn default() -> Self {
        NormalcyParams {
            alpha: 1.0,
            q: 0.05,
            min_cell_count: 50,
            epsilon_nfa: 1.0,
        }
    }
}

impl NormalcyParams {
    pub fn validate(&self) -> Result<(), NormalcyError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(NormalcyError::InvalidParams("alpha must be > 0".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(NormalcyError::InvalidParams("q must be in (0, 1)".into()));
        }
        if !(self.epsilon_nfa.is_finite() && self.epsilon_nfa > 0.0) {
            return Err(NormalcyError::InvalidParams("epsilon_nfa must be > 0".into()));
        }
        Ok(())
    }
}

/// Anything that scores messages and carries cell-local thresholds.
pub trait Scorer: Send + Sync {
    /// Flat cell index of a message.
    fn cell_of(&self, msg: &AisMessage) -> Result<usize, NormalcyError>;
    /// Log-likelihood of a message under the model.
    fn score(&self, msg: &AisMessage) -> Result<f64, NormalcyError>;
    /// `None` for cells without enough training data.
    fn threshold(&self, cell: usize) -> Option<f64>;
    fn validated_cells(&self) -> usize;
}

/// Cell-conditional histogram over (speed bin, course bin) with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalcyModel {
    pub roi: Roi,
    pub grid: GridConfig,
    pub params: NormalcyParams,
    shape: GridShape,
    /// Dense `cells x kinematic_bins` counts.
    counts: Vec<u32>,
    cell_totals: Vec<u64>,
    thresholds: Vec<Option<f64>>,
}

impl NormalcyModel {
    /// Learns per-cell histograms and thresholds from preprocessed tracks.
    pub fn fit(tracks: &[Track], roi: Roi, grid: GridConfig, params: NormalcyParams) -> Result<Self, NormalcyError> {
        let messages: Vec<AisMessage> = tracks.iter().flat_map(|t| t.points.iter().copied()).collect();
        Self::fit_messages(&messages, roi, grid, params)
    }

    pub fn fit_messages(
        messages: &[AisMessage],
        roi: Roi,
        grid: GridConfig,
        params: NormalcyParams,
    ) -> Result<Self, NormalcyError> {
        if messages.is_empty() {
            return Err(NormalcyError::EmptyTrainingSet);
        }
        params.validate()?;
        let shape = grid.shape(&roi)?;
        let bins = shape.kinematic_bins();
        let mut counts = vec![0u32; shape.cells * bins];
        let mut cell_totals = vec![0u64; shape.cells];
        for m in messages {
            let cell = shape.flat(cell_index_in(m.lat, m.lon, &roi, &grid, &shape)?);
            let (s, c) = kinematic_bin(m, &grid);
            counts[cell * bins + s * shape.cog_bins + c] += 1;
            cell_totals[cell] += 1;
        }
        Self::from_counts(roi, grid, params, counts)
    }

    /// Rebuilds a model from raw counts, recomputing totals and thresholds.
    pub fn from_counts(
        roi: Roi,
        grid: GridConfig,
        params: NormalcyParams,
        counts: Vec<u32>,
    ) -> Result<Self, NormalcyError> {
        params.validate()?;
        let shape = grid.shape(&roi)?;
        let bins = shape.kinematic_bins();
        if counts.len() != shape.cells * bins {
            return Err(NormalcyError::Shape {
                expected: shape.cells * bins,
                found: counts.len(),
            });
        }
        let cell_totals: Vec<u64> = counts.chunks(bins).map(|c| c.iter().map(|&v| v as u64).sum()).collect();
        let mut model = NormalcyModel {
            roi,
            grid,
            params,
            shape,
            counts,
            cell_totals,
            thresholds: Vec::new(),
        };
        model.thresholds = (0..shape.cells).map(|c| model.cell_threshold(c)).collect();
        Ok(model)
    }

    /// Lower empirical q-quantile of the training scores in one cell.
    fn cell_threshold(&self, cell: usize) -> Option<f64> {
        let total = self.cell_totals[cell];
        if total == 0 || total < self.params.min_cell_count {
            return None;
        }
        let rank = ((total - 1) as f64 * self.params.q).floor() as u64;
        // training scores sorted ascending equal bins sorted by count ascending,
        // each repeated count times
        let mut bins: Vec<u32> = self.cell_counts(cell).iter().copied().filter(|&c| c > 0).collect();
        bins.sort_unstable();
        let mut seen = 0u64;
        for c in bins {
            seen += c as u64;
            if seen > rank {
                return Some(self.log_prob(cell, c));
            }
        }
        unreachable!("rank < total")
    }

    fn log_prob(&self, cell: usize, count: u32) -> f64 {
        let a = self.params.alpha;
        let b = self.shape.kinematic_bins() as f64;
        ((count as f64 + a) / (self.cell_totals[cell] as f64 + a * b)).ln()
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn cell_counts(&self, cell: usize) -> &[u32] {
        let bins = self.shape.kinematic_bins();
        &self.counts[cell * bins..(cell + 1) * bins]
    }

    pub fn cell_totals(&self) -> &[u64] {
        &self.cell_totals
    }

    pub fn thresholds(&self) -> &[Option<f64>] {
        &self.thresholds
    }

    pub fn bin_of(&self, msg: &AisMessage) -> usize {
        let (s, c) = kinematic_bin(msg, &self.grid);
        s * self.shape.cog_bins + c
    }

    /// Smoothed probability of one bin of one cell.
    pub fn probability(&self, cell: usize, bin: usize) -> f64 {
        self.log_prob(cell, self.cell_counts(cell)[bin]).exp()
    }
}

impl Scorer for NormalcyModel {
    fn cell_of(&self, msg: &AisMessage) -> Result<usize, NormalcyError> {
        let c = cell_index_in(msg.lat, msg.lon, &self.roi, &self.grid, &self.shape)?;
        Ok(self.shape.flat(c))
    }

    fn score(&self, msg: &AisMessage) -> Result<f64, NormalcyError> {
        let cell = self.cell_of(msg)?;
        let count = self.cell_counts(cell)[self.bin_of(msg)];
        Ok(self.log_prob(cell, count))
    }

    fn threshold(&self, cell: usize) -> Option<f64> {
        self.thresholds.get(cell).copied().flatten()
    }

    fn validated_cells(&self) -> usize {
        self.thresholds.iter().filter(|t| t.is_some()).count()
    }
}

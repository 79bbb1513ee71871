//! Semantic descriptor weighting.
//!
//! Each keypoint samples the aggregated heatmap at its position and the
//! descriptor is scaled by a per-keypoint weight. The production mode
//! normalizes `1 + H` by its per-image maximum, which keeps every weight in
//! `[0.5, 1]` with the maximum pinned at 1; the raw-heatmap and
//! unnormalized-plus-one modes are kept for ablation runs.

use thiserror::Error;

use crate::features::{Descriptors, DescriptorSet, FeatureError};
use crate::heatmap::{self, Heatmap, HeatmapError};

#[derive(Debug, Error)]
pub enum WeightingError {
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("descriptor count {descriptors} does not match weight count {weights}")]
    LengthMismatch { descriptors: usize, weights: usize },
    #[error("weight {value} at index {index} is not finite and non-negative")]
    BadWeight { index: usize, value: f32 },
}

/// How heatmap samples turn into descriptor weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `(1 + H_i) / max_j (1 + H_j)` — weights in `[0.5, 1]`, max pinned at 1.
    PaperNormalized,
    /// `H_i` — rejected ablation; background weights collapse toward zero.
    RawHeatmap,
    /// `1 + H_i` — rejected ablation; inflates descriptors past unit range.
    UnnormalizedPlusOne,
    /// All ones; the unweighted baseline.
    None,
}

impl WeightMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Self::PaperNormalized),
            "raw" => Some(Self::RawHeatmap),
            "plus-one" => Some(Self::UnnormalizedPlusOne),
            "none" => Some(Self::None),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::PaperNormalized => "paper",
            Self::RawHeatmap => "raw",
            Self::UnnormalizedPlusOne => "plus-one",
            Self::None => "none",
        }
    }
}

/// Per-keypoint weights from heatmap samples. Empty input yields an empty
/// list; the maximum in the normalized mode is taken over this image's
/// keypoints only.
pub fn compute_weights(
    positions: &[(f32, f32)],
    h: &Heatmap,
    mode: WeightMode,
) -> Result<Vec<f32>, WeightingError> {
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let samples: Vec<f32> = positions
        .iter()
        .map(|&(x, y)| heatmap::sample(h, x, y))
        .collect::<Result<_, _>>()?;
    Ok(match mode {
        WeightMode::None => vec![1.0; samples.len()],
        WeightMode::RawHeatmap => samples,
        WeightMode::UnnormalizedPlusOne => samples.iter().map(|&s| 1.0 + s).collect(),
        WeightMode::PaperNormalized => {
            let max = samples.iter().fold(1.0f32, |acc, &s| acc.max(1.0 + s));
            samples.iter().map(|&s| (1.0 + s) / max).collect()
        }
    })
}

/// Elementwise `alpha_i * d_i`.
pub fn apply_weights(
    descriptors: &Descriptors,
    weights: &[f32],
) -> Result<Descriptors, WeightingError> {
    if descriptors.len() != weights.len() {
        return Err(WeightingError::LengthMismatch {
            descriptors: descriptors.len(),
            weights: weights.len(),
        });
    }
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(WeightingError::BadWeight { index, value: w });
        }
    }
    let mut data = Vec::with_capacity(descriptors.len() * descriptors.dim());
    for (row, &w) in descriptors.rows().zip(weights) {
        data.extend(row.iter().map(|&v| w * v));
    }
    Ok(Descriptors::new(descriptors.dim(), data).expect("dim preserved"))
}

/// Keypoint positions with original descriptors, weights and the weighted
/// descriptors side by side. Both sides are retained so the attention-score
/// identities can be verified from either direction.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDescriptorSet {
    positions: Vec<(f32, f32)>,
    descriptors: Descriptors,
    weights: Vec<f32>,
    weighted: Descriptors,
}

impl WeightedDescriptorSet {
    /// Weight a descriptor set against an aggregated heatmap.
    pub fn from_heatmap(
        set: &DescriptorSet,
        h: &Heatmap,
        mode: WeightMode,
    ) -> Result<Self, WeightingError> {
        let positions = set.positions();
        let weights = compute_weights(&positions, h, mode)?;
        let weighted = apply_weights(set.descriptors(), &weights)?;
        Ok(Self {
            positions,
            descriptors: set.descriptors().clone(),
            weights,
            weighted,
        })
    }

    /// Assemble from precomputed weights (e.g. a NIOK weights column).
    pub fn from_weights(
        set: &DescriptorSet,
        weights: Vec<f32>,
    ) -> Result<Self, WeightingError> {
        let weighted = apply_weights(set.descriptors(), &weights)?;
        Ok(Self {
            positions: set.positions(),
            descriptors: set.descriptors().clone(),
            weights,
            weighted,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.weighted.dim()
    }

    pub fn positions(&self) -> &[(f32, f32)] {
        &self.positions
    }

    pub fn descriptors(&self) -> &Descriptors {
        &self.descriptors
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weighted(&self) -> &Descriptors {
        &self.weighted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heatmap_from(values: &[f32], width: usize) -> Heatmap {
        Heatmap::new(width, values.len() / width, values.to_vec()).unwrap()
    }

    #[test]
    fn paper_mode_matches_formula_extremes() {
        // H = {0, 1} at two keypoints.
        let h = heatmap_from(&[0.0, 1.0], 2);
        let positions = [(0.0, 0.0), (1.0, 0.0)];
        let w = compute_weights(&positions, &h, WeightMode::PaperNormalized).unwrap();
        assert_eq!(w, vec![0.5, 1.0]);
    }

    #[test]
    fn constant_heatmap_is_identity() {
        for c in [0.0, 0.3, 1.0] {
            let h = heatmap_from(&[c, c, c], 3);
            let positions = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
            let w = compute_weights(&positions, &h, WeightMode::PaperNormalized).unwrap();
            assert_eq!(w, vec![1.0, 1.0, 1.0], "c = {c}");
        }
    }

    #[test]
    fn paper_mode_direct_evaluation() {
        let h = heatmap_from(&[0.2, 0.6, 1.0], 3);
        let positions = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        let w = compute_weights(&positions, &h, WeightMode::PaperNormalized).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-6);
        assert!((w[1] - 0.8).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn ablation_modes_follow_their_definitions() {
        let h = heatmap_from(&[0.25, 0.75], 2);
        let positions = [(0.0, 0.0), (1.0, 0.0)];
        assert_eq!(
            compute_weights(&positions, &h, WeightMode::RawHeatmap).unwrap(),
            vec![0.25, 0.75]
        );
        assert_eq!(
            compute_weights(&positions, &h, WeightMode::UnnormalizedPlusOne).unwrap(),
            vec![1.25, 1.75]
        );
        assert_eq!(
            compute_weights(&positions, &h, WeightMode::None).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn empty_input_returns_empty() {
        let h = Heatmap::zeros(4, 4);
        assert!(compute_weights(&[], &h, WeightMode::PaperNormalized)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn zero_heatmap_equals_mode_none_exactly() {
        let h = Heatmap::zeros(8, 8);
        let positions: Vec<(f32, f32)> = (0..5).map(|i| (i as f32, i as f32 * 0.5)).collect();
        let paper = compute_weights(&positions, &h, WeightMode::PaperNormalized).unwrap();
        let none = compute_weights(&positions, &h, WeightMode::None).unwrap();
        assert_eq!(paper, none);
    }

    #[test]
    fn apply_weights_identity_and_scaling() {
        let d = Descriptors::new(3, vec![1.0, 1.0, 1.0, 0.5, 0.25, 0.0]).unwrap();
        let same = apply_weights(&d, &[1.0, 1.0]).unwrap();
        assert_eq!(same.data(), d.data());
        let halved = apply_weights(&d, &[0.5, 0.5]).unwrap();
        assert_eq!(halved.data(), &[0.5, 0.5, 0.5, 0.25, 0.125, 0.0]);
    }

    #[test]
    fn apply_weights_rejects_mismatch_and_bad_weights() {
        let d = Descriptors::new(2, vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            apply_weights(&d, &[1.0, 1.0]),
            Err(WeightingError::LengthMismatch { .. })
        ));
        assert!(matches!(
            apply_weights(&d, &[-0.5]),
            Err(WeightingError::BadWeight { .. })
        ));
    }

    #[test]
    fn weighted_outputs_stay_in_half_to_full_band() {
        // Random-ish descriptors in [0,1]^128 against direct per-element
        // multiplication with paper-normalized weights.
        let n = 40;
        let dim = 128;
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n * dim {
            data.push((crate::rng::derive_seed(77, i as u64) % 1000) as f32 / 1000.0);
        }
        let d = Descriptors::new(dim, data).unwrap();
        let h = Heatmap::new(
            n,
            1,
            (0..n).map(|i| i as f32 / (n - 1) as f32).collect(),
        )
        .unwrap();
        let positions: Vec<(f32, f32)> = (0..n).map(|i| (i as f32, 0.0)).collect();
        let w = compute_weights(&positions, &h, WeightMode::PaperNormalized).unwrap();
        let out = apply_weights(&d, &w).unwrap();
        for i in 0..n {
            assert!((0.5..=1.0).contains(&w[i]));
            for (o, v) in out.row(i).iter().zip(d.row(i)) {
                assert_eq!(*o, w[i] * v);
                assert!(*o >= 0.5 * v - 1e-7 && *o <= *v + 1e-7);
            }
        }
        assert!(w.iter().any(|&x| x == 1.0));
    }
}

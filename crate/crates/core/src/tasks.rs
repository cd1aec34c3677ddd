//! Prediction tasks expressed as step losses.
//!
//! Each task has a native threshold (interval half-width, mask score cutoff)
//! and a mapping into the engine's internal parameter `u`, in which every
//! loss is nondecreasing. Intervals grow with their width, so `u = −width`.
//! Masks shrink as the cutoff rises, so `u` is the cutoff itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::StepLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Sets grow with the native parameter (interval width).
    GrowingSets,
    /// Sets shrink as the native parameter grows (score cutoff).
    ShrinkingSets,
}

impl Orientation {
    pub fn to_native(self, u: f64) -> f64 {
        match self {
            Self::GrowingSets => -u,
            Self::ShrinkingSets => u,
        }
    }

    pub fn from_native(self, t: f64) -> f64 {
        match self {
            Self::GrowingSets => -t,
            Self::ShrinkingSets => t,
        }
    }
}

/// Regression predictions with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTask {
    predictions: Vec<f64>,
    labels: Vec<f64>,
}

impl IntervalTask {
    pub const ORIENTATION: Orientation = Orientation::GrowingSets;

    pub fn new(predictions: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: predictions.len(),
                found: labels.len(),
            });
        }
        Ok(Self { predictions, labels })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn losses(&self) -> Result<Vec<StepLoss>> {
        self.predictions
            .iter()
            .zip(&self.labels)
            .map(|(&p, &y)| interval_loss(p, y))
            .collect()
    }
}

/// Miscoverage of the closed interval `[prediction ± w]` as a function of
/// `u = −w`: a single step from 0 to 1 just after `u = −|label − prediction|`.
pub fn interval_loss(prediction: f64, label: f64) -> Result<StepLoss> {
    if !prediction.is_finite() || !label.is_finite() {
        return Err(Error::InvalidLoss(format!("non-finite pair ({prediction}, {label})")));
    }
    StepLoss::single_step(-(label - prediction).abs())
}

/// `[f̂ − w, f̂ + w]` with `w` floored at zero.
pub fn prediction_interval(prediction: f64, width: f64) -> (f64, f64) {
    let w = width.max(0.0);
    (prediction - w, prediction + w)
}

pub fn covers(interval: (f64, f64), label: f64) -> bool {
    interval.0 <= label && label <= interval.1
}

/// Per-pixel scores and ground-truth mask of one image, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSample {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    mask: Vec<bool>,
}

impl SegmentationSample {
    pub const ORIENTATION: Orientation = Orientation::ShrinkingSets;

    pub fn new(rows: usize, cols: usize, scores: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let size = rows * cols;
        if scores.len() != size {
            return Err(Error::DimensionMismatch {
                expected: size,
                found: scores.len(),
            });
        }
        if mask.len() != size {
            return Err(Error::DimensionMismatch {
                expected: size,
                found: mask.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidConfig(format!("score {s} outside [0, 1]")));
        }
        Ok(Self {
            rows,
            cols,
            scores,
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Recall loss `ℓ(u) = #{positive pixels with score < u} / |y|`.
pub fn recall_loss(sample: &SegmentationSample) -> Result<StepLoss> {
    let positives = sample.positives();
    if positives == 0 {
        return Err(Error::EmptyMask);
    }
    let mut scores: Vec<f64> = sample
        .scores
        .iter()
        .zip(&sample.mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .collect();
    scores.sort_by(f64::total_cmp);
    // Each value is written as 1 − recall, with recall computed the same way
    // as in `mask_metrics`, so the two agree bit for bit.
    let value = |missed: usize| 1.0 - (positives - missed) as f64 / positives as f64;
    let mut breakpoints = Vec::new();
    let mut values = vec![0.0];
    for (k, &s) in scores.iter().enumerate() {
        if breakpoints.last() == Some(&s) {
            *values.last_mut().unwrap() = value(k + 1);
        } else {
            breakpoints.push(s);
            values.push(value(k + 1));
        }
    }
    StepLoss::new(breakpoints, values)
}

/// Predicted mask `1{score ≥ t}`.
///
/// `t` is not clamped to `[0, 1]`: a cutoff above 1 must exclude pixels scored
/// exactly 1 to agree with [`recall_loss`], and infinite cutoffs give the
/// empty or full mask.
pub fn apply_mask_threshold(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub recall: f64,
    /// 1 when the prediction is empty.
    pub precision: f64,
    pub predicted: usize,
}

pub fn mask_metrics(predicted: &[bool], truth: &[bool]) -> Result<MaskMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::EmptyMask);
    }
    let n_pred = predicted.iter().filter(|&&p| p).count();
    let hits = predicted.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    Ok(MaskMetrics {
        recall: hits as f64 / positives as f64,
        precision: if n_pred == 0 { 1.0 } else { hits as f64 / n_pred as f64 },
        predicted: n_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_loss_examples() {
        let zero = interval_loss(0.0, 0.0).unwrap();
        assert_eq!(zero.breakpoints(), &[0.0]);
        assert_eq!(zero.eval(-0.5), 0.0);
        assert_eq!(interval_loss(1.0, 3.0).unwrap().breakpoints(), &[-2.0]);
        assert!(interval_loss(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn orientation_round_trip() {
        assert_eq!(Orientation::GrowingSets.to_native(-2.0), 2.0);
        assert_eq!(Orientation::ShrinkingSets.to_native(0.3), 0.3);
        for u in [-3.5, 0.0, 1e-7, 12.25] {
            for o in [Orientation::GrowingSets, Orientation::ShrinkingSets] {
                assert_eq!(o.from_native(o.to_native(u)), u);
            }
        }
    }

    #[test]
    fn recall_loss_hand_example() {
        let sample = SegmentationSample::new(1, 3, vec![0.3, 0.7, 0.9], vec![true, true, false]).unwrap();
        let loss = recall_loss(&sample).unwrap();
        assert_eq!(loss.eval(0.3), 0.0);
        assert_eq!(loss.eval(0.5), 0.5);
        assert_eq!(loss.eval(0.7), 0.5);
        assert_eq!(loss.eval(0.71), 1.0);
    }

    #[test]
    fn recall_loss_all_ones_and_full_mask() {
        let sample = SegmentationSample::new(2, 2, vec![1.0; 4], vec![true, false, true, false]).unwrap();
        let loss = recall_loss(&sample).unwrap();
        assert_eq!(loss.breakpoints(), &[1.0]);
        assert_eq!(loss.eval(1.0), 0.0);

        let scores = vec![0.1, 0.2, 0.3, 0.4];
        let full = SegmentationSample::new(2, 2, scores.clone(), vec![true; 4]).unwrap();
        let loss = recall_loss(&full).unwrap();
        assert_eq!(loss.breakpoints(), scores.as_slice());
        assert_eq!(loss.values(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let sample = SegmentationSample::new(1, 2, vec![0.1, 0.2], vec![false, false]).unwrap();
        assert!(matches!(recall_loss(&sample), Err(Error::EmptyMask)));
        assert!(SegmentationSample::new(1, 2, vec![0.1], vec![true, false]).is_err());
        assert!(SegmentationSample::new(1, 1, vec![1.5], vec![true]).is_err());
    }

    #[test]
    fn thresholds_and_metrics() {
        assert_eq!(prediction_interval(2.0, 0.5), (1.5, 2.5));
        assert_eq!(prediction_interval(2.0, -1.0), (2.0, 2.0));
        let scores = [0.0, 0.4, 1.0];
        assert_eq!(apply_mask_threshold(&scores, 0.0), vec![true; 3]);
        assert_eq!(apply_mask_threshold(&scores, 1.01), vec![false; 3]);

        let truth = [true, false, true, false];
        let m = mask_metrics(&truth, &truth).unwrap();
        assert_eq!((m.recall, m.precision), (1.0, 1.0));
        let m = mask_metrics(&[true; 4], &truth).unwrap();
        assert_eq!((m.recall, m.precision), (1.0, 0.5));
        let m = mask_metrics(&[false, true, false, false], &truth).unwrap();
        assert_eq!((m.recall, m.precision), (0.0, 0.0));
        let m = mask_metrics(&[false; 4], &truth).unwrap();
        assert_eq!((m.recall, m.precision, m.predicted), (0.0, 1.0, 0));
        assert!(mask_metrics(&[true], &truth).is_err());
    }

    fn arb_sample() -> impl Strategy<Value = SegmentationSample> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            let size = r * c;
            (
                // Coarse grid of scores so ties and exact hits are common.
                prop::collection::vec((0u8..=10).prop_map(|k| k as f64 / 10.0), size),
                prop::collection::vec(any::<bool>(), size),
                0..size,
            )
                .prop_map(move |(scores, mut mask, forced)| {
                    mask[forced] = true;
                    SegmentationSample::new(r, c, scores, mask).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn recall_loss_matches_mask_recall(sample in arb_sample(), k in -2i32..14) {
            let loss = recall_loss(&sample).unwrap();
            let u = k as f64 / 10.0;
            let pred = apply_mask_threshold(sample.scores(), u);
            let recall = mask_metrics(&pred, sample.mask()).unwrap().recall;
            prop_assert_eq!(loss.eval(u), 1.0 - recall);
        }

        #[test]
        fn recall_loss_values_are_multiples(sample in arb_sample()) {
            let loss = recall_loss(&sample).unwrap();
            let y = sample.positives() as f64;
            for w in loss.values().windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for v in loss.values() {
                prop_assert!(((v * y).round() - v * y).abs() < 1e-9);
            }
        }

        #[test]
        fn masks_are_nested(scores in prop::collection::vec(0.0f64..=1.0, 1..40), a in -0.2f64..1.2, b in -0.2f64..1.2) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = apply_mask_threshold(&scores, hi);
            let large = apply_mask_threshold(&scores, lo);
            prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
        }

        #[test]
        fn interval_loss_matches_coverage(p in -5.0f64..5.0, y in -5.0f64..5.0, w in 0.0f64..10.0) {
            let loss = interval_loss(p, y).unwrap();
            let covered = covers(prediction_interval(p, w), y);
            prop_assert_eq!(loss.eval(-w), if covered { 0.0 } else { 1.0 });
            // Exactly at the residual the closed interval covers.
            let r = (y - p).abs();
            prop_assert_eq!(loss.eval(-r), 0.0);
        }
    }
}

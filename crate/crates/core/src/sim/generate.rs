//! Synthetic data generators.
//!
//! The regression generator is a one-dimensional heteroscedastic problem with
//! the oracle mean as predictor. The segmentation generator plants a known
//! difficulty `σ` per image: blob masks are scored by a sigmoid of the signed
//! distance to the blob boundary with logit-scale noise. A larger `σ` widens
//! the transition and moves the predicted boundary inward, so harder images
//! need lower thresholds to reach a given recall. The embedding exposes `σ`
//! (and its square) so a linear function class can adapt thresholds to it.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;
use crate::tasks::SegmentationSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub f_hat: Vec<f64>,
}

impl RegressionData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn abs_residuals(&self) -> Vec<f64> {
        self.y.iter().zip(&self.f_hat).map(|(y, f)| (y - f).abs()).collect()
    }
}

/// Oracle mean `sin²x + 0.1`.
pub fn regression_mean(x: f64) -> f64 {
    x.sin().powi(2) + 0.1
}

/// `x ~ U[0, 10]`, `y = sin²x + 0.1 + 0.3(1 + x/10)ε` with standard normal `ε`.
pub fn synth_regression_generate(n: usize, seed: u64) -> Result<RegressionData> {
    if n == 0 {
        return Err(Error::EmptyData("regression generator needs n >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = RegressionData {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        f_hat: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..10.0);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let mean = regression_mean(x);
        data.x.push(x);
        data.y.push(mean + 0.3 * (1.0 + x / 10.0) * eps);
        data.f_hat.push(mean);
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationParams {
    pub rows: usize,
    pub cols: usize,
    /// Embedding width `q ≥ 5`; columns beyond the fifth are pure noise.
    pub embedding_dim: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            embedding_dim: 6,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 16 {
            return Err(Error::InvalidConfig("images need at least 16 pixels".into()));
        }
        if self.embedding_dim < 5 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 5".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationData {
    pub samples: Vec<SegmentationSample>,
    /// Blur width `σ` of each image.
    pub difficulty: Vec<f64>,
    /// Rows `[1, σ, σ², area fraction, noise level, noise…]`.
    pub embedding: Matrix,
}

// Frozen generator constants.
const SIGMA_RANGE: (f64, f64) = (0.4, 3.0);
/// Standard deviation of the logit-scale score noise.
const NOISE_RANGE: (f64, f64) = (0.2, 1.2);
/// The predicted boundary sits `SHIFT_SCALE·(σ − SHIFT_MID)` pixels inside
/// the true one: easy images bleed outward, hard ones under-segment.
const SHIFT_SCALE: f64 = 1.4;
const SHIFT_MID: f64 = 1.1;
/// Transition width `WIDTH.0 + WIDTH.1·σ` in pixels.
const WIDTH: (f64, f64) = (0.5, 0.2);

pub fn synth_segmentation_generate(count: usize, rows: usize, cols: usize, seed: u64) -> Result<SegmentationData> {
    synth_segmentation_with(
        count,
        &SegmentationParams {
            rows,
            cols,
            ..SegmentationParams::default()
        },
        seed,
    )
}

pub fn synth_segmentation_with(count: usize, params: &SegmentationParams, seed: u64) -> Result<SegmentationData> {
    if count == 0 {
        return Err(Error::EmptyData("segmentation generator needs count >= 1".into()));
    }
    params.validate()?;
    let (rows, cols) = (params.rows, params.cols);
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(count);
    let mut difficulty = Vec::with_capacity(count);
    let mut embedding = Matrix::zeros(count, params.embedding_dim);
    let size = rows.min(cols) as f64;

    for i in 0..count {
        let blobs = rng.random_range(1..=3usize);
        let discs: Vec<(f64, f64, f64)> = (0..blobs)
            .map(|_| {
                let r = rng.random_range(0.1..0.25) * size;
                let cy = rng.random_range(0.2..0.8) * rows as f64;
                let cx = rng.random_range(0.2..0.8) * cols as f64;
                (cy, cx, r.max(1.0))
            })
            .collect();
        let sigma: f64 = rng.random_range(SIGMA_RANGE.0..SIGMA_RANGE.1);
        let noise: f64 = rng.random_range(NOISE_RANGE.0..NOISE_RANGE.1);
        let shift = SHIFT_SCALE * (sigma - SHIFT_MID);
        let width = WIDTH.0 + WIDTH.1 * sigma;

        let mut scores = Vec::with_capacity(rows * cols);
        let mut mask = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
                // Signed distance to the union boundary, positive inside.
                let dist = discs
                    .iter()
                    .map(|&(cy, cx, rad)| rad - ((py - cy).powi(2) + (px - cx).powi(2)).sqrt())
                    .fold(f64::NEG_INFINITY, f64::max);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let z = (dist - shift) / width + noise * eps;
                scores.push(sigmoid(z));
                mask.push(dist >= 0.0);
            }
        }
        // A disc always covers its own centre pixel, but guard anyway.
        if !mask.iter().any(|&m| m) {
            let (cy, cx, _) = discs[0];
            let idx = (cy as usize).min(rows - 1) * cols + (cx as usize).min(cols - 1);
            mask[idx] = true;
        }
        let area = mask.iter().filter(|&&m| m).count() as f64 / (rows * cols) as f64;

        let row = embedding.row_mut(i);
        row[0] = 1.0;
        row[1] = sigma;
        row[2] = sigma * sigma;
        row[3] = area;
        row[4] = noise;
        for v in &mut row[5..] {
            *v = StandardNormal.sample(&mut rng);
        }
        samples.push(SegmentationSample::new(rows, cols, scores, mask)?);
        difficulty.push(sigma);
    }
    Ok(SegmentationData {
        samples,
        difficulty,
        embedding,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::AlphaLevel;
    use crate::sim::stats::spearman;
    use crate::tasks::recall_loss;

    #[test]
    fn regression_is_deterministic_and_bounded() {
        let a = synth_regression_generate(5, 11).unwrap();
        let b = synth_regression_generate(5, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_regression_generate(2000, 3).unwrap();
        assert!(c.f_hat.iter().all(|f| (0.1..=1.1).contains(f)));
        assert!(c.x.iter().all(|x| (0.0..10.0).contains(x)));
        assert!(synth_regression_generate(0, 1).is_err());
    }

    #[test]
    fn regression_noise_grows_with_x() {
        let data = synth_regression_generate(50_000, 5).unwrap();
        let res = data.abs_residuals();
        let mean_where = |pred: &dyn Fn(f64) -> bool| {
            let v: Vec<f64> = data
                .x
                .iter()
                .zip(&res)
                .filter(|(x, _)| pred(**x))
                .map(|(_, r)| *r)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let low = mean_where(&|x| x < 1.0);
        let high = mean_where(&|x| x > 9.0);
        // E|ε|·0.3·(1 + x/10) is about 0.25 near 0 and 0.46 near 10.
        assert!(low < high, "{low} vs {high}");
    }

    #[test]
    fn segmentation_structure() {
        let data = synth_segmentation_generate(20, 16, 16, 9).unwrap();
        assert_eq!(data.samples.len(), 20);
        assert_eq!(data.embedding.nrows(), 20);
        for (s, row) in data.samples.iter().zip(data.embedding.rows()) {
            assert!(s.positives() > 0);
            assert!(s.scores().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(row[0], 1.0);
            assert_eq!(row[2], row[1] * row[1]);
        }
        assert_eq!(data, synth_segmentation_generate(20, 16, 16, 9).unwrap());
        assert!(synth_segmentation_generate(3, 3, 3, 0).is_err());
    }

    #[test]
    fn harder_images_need_lower_thresholds() {
        let data = synth_segmentation_generate(500, 32, 32, 2024).unwrap();
        let alpha = AlphaLevel::new(0.1).unwrap();
        let crossing: Vec<f64> = data
            .samples
            .iter()
            .map(|s| recall_loss(s).unwrap().crossing_threshold(alpha))
            .collect();
        let s = spearman(&data.difficulty, &crossing).unwrap();
        assert!(s.rho < -0.3, "rho = {}", s.rho);
    }
}

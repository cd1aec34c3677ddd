use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Principal axes of an embedding, truncated to the smallest number of
/// components whose cumulative explained-variance ratio reaches the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// Retained components, one orthonormal row each.
    components: Vec<Vec<f64>>,
    /// Explained-variance ratio of every axis, in decreasing order.
    explained_variance_ratio: Vec<f64>,
    target_evr: f64,
}

impl PcaModel {
    /// Fits by eigen-decomposition of the sample covariance.
    pub fn fit(data: &Matrix, target_evr: f64) -> Result<Self> {
        if !(target_evr > 0.0 && target_evr <= 1.0) {
            return Err(Error::InvalidConfig(format!("target_evr {target_evr} outside (0, 1]")));
        }
        let (n, d) = (data.nrows(), data.ncols());
        if n == 0 || d == 0 {
            return Err(Error::EmptyData("PCA needs at least one row and column".into()));
        }
        let mut mean = vec![0.0; d];
        for row in data.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for row in data.rows() {
            let centered: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / denom;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        let total: f64 = values.iter().sum();
        let scale = mean.iter().map(|m| m.abs()).fold(1.0, f64::max);
        if total <= 1e-24 * scale * scale {
            return Err(Error::DegenerateData("embedding has zero variance".into()));
        }
        let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();

        let mut retained = 0;
        let mut cumulative = 0.0;
        for r in &ratios {
            retained += 1;
            cumulative += r;
            if cumulative >= target_evr - 1e-12 {
                break;
            }
        }
        let components = order[..retained]
            .iter()
            .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        Ok(Self {
            mean,
            components,
            explained_variance_ratio: ratios,
            target_evr,
        })
    }

    pub fn retained(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    pub fn target_evr(&self) -> f64 {
        self.target_evr
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    /// Maps projected coordinates back to the input space.
    pub fn back_project(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn line_in_3d_keeps_one_component() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 / 7.0;
                vec![1.0 + t, 2.0 - 2.0 * t, 0.5 * t]
            })
            .collect();
        let model = PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.85).unwrap();
        assert_eq!(model.retained(), 1);
    }

    #[test]
    fn isotropic_gaussian_keeps_two() {
        let mut rng = rng_from_seed(4);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let model = PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.85).unwrap();
        // Direct 2×2 eigenvalue ratio as the oracle.
        let n = rows.len() as f64;
        let mx = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let my = rows.iter().map(|r| r[1]).sum::<f64>() / n;
        let sxx = rows.iter().map(|r| (r[0] - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let syy = rows.iter().map(|r| (r[1] - my).powi(2)).sum::<f64>() / (n - 1.0);
        let sxy = rows.iter().map(|r| (r[0] - mx) * (r[1] - my)).sum::<f64>() / (n - 1.0);
        let tr = sxx + syy;
        let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
        let top_ratio = (tr + disc) / 2.0 / tr;
        assert!(top_ratio < 0.85);
        assert!((model.explained_variance_ratio()[0] - top_ratio).abs() < 1e-10);
        assert_eq!(model.retained(), 2);
    }

    #[test]
    fn mean_projects_to_origin() {
        let mut rng = rng_from_seed(8);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..3.0)).collect())
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let model = PcaModel::fit(&data, 0.9).unwrap();
        let proj = model.project(model.mean()).unwrap();
        assert!(proj.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn components_orthonormal_and_full_reconstruction() {
        let mut rng = rng_from_seed(12);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                vec![a, b, a + b, 2.0 * a - b, rng.random_range(-0.1..0.1)]
            })
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let model = PcaModel::fit(&data, 1.0).unwrap();
        let c = model.components();
        for i in 0..c.len() {
            for j in 0..c.len() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&c[i], &c[j]) - expected).abs() < 1e-8);
            }
        }
        for row in &rows {
            let back = model.back_project(&model.project(row).unwrap());
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        let rows = vec![vec![1.0, 2.0]; 10];
        assert!(matches!(
            PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.85),
            Err(Error::DegenerateData(_))
        ));
        assert!(PcaModel::fit(&Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(), 0.0).is_err());
    }
}

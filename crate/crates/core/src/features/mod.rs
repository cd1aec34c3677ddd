//! Function classes `Λ = {x ↦ Φ(x)ᵀθ}`.
//!
//! A [`FeatureMap`] turns an input record into the feature vector `Φ(x)`. The
//! calibration engine only ever sees these vectors, so the choice of map is
//! what decides which groups or covariate shifts the guarantee covers.

mod forest;
mod pca;

use serde::{Deserialize, Serialize};

pub use forest::{rf_fit, Node, RandomForest, RfParams, Tree};
pub use pca::PcaModel;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Membership rule `lower ≤ x[feature] < upper`; a missing bound is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRule {
    pub feature: usize,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

impl GroupRule {
    pub fn contains(&self, x: &[f64]) -> bool {
        let v = x[self.feature];
        self.lower.is_none_or(|lo| v >= lo) && self.upper.is_none_or(|hi| v < hi)
    }
}

/// Equal-width bins `[lo + k·w, lo + (k+1)·w)` on one feature; the outer bins
/// are left open so every value belongs to exactly one group.
pub fn equal_width_bins(feature: usize, lo: f64, hi: f64, count: usize) -> Vec<GroupRule> {
    let width = (hi - lo) / count as f64;
    (0..count)
        .map(|k| GroupRule {
            feature,
            lower: (k > 0).then_some(lo + k as f64 * width),
            upper: (k + 1 < count).then_some(lo + (k + 1) as f64 * width),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `Φ(x) = [1]`: marginal risk control.
    Intercept,
    /// Possibly overlapping group indicators over raw features.
    GroupIndicators { input_dim: usize, groups: Vec<GroupRule> },
    /// Precomputed embedding, optionally PCA-reduced, optionally with a trailing 1.
    LinearEmbedding {
        dim: usize,
        pca: Option<PcaModel>,
        append_intercept: bool,
    },
    /// One indicator per forest leaf.
    RfLeaf { forest: RandomForest },
}

impl FeatureMap {
    pub fn group_indicators(input_dim: usize, groups: Vec<GroupRule>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("at least one group is required".into()));
        }
        if let Some(g) = groups.iter().find(|g| g.feature >= input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                found: g.feature + 1,
            });
        }
        Ok(Self::GroupIndicators { input_dim, groups })
    }

    /// Output dimension `d`.
    pub fn dimension(&self) -> usize {
        match self {
            Self::Intercept => 1,
            Self::GroupIndicators { groups, .. } => groups.len(),
            Self::LinearEmbedding {
                dim,
                pca,
                append_intercept,
            } => pca.as_ref().map_or(*dim, PcaModel::retained) + usize::from(*append_intercept),
            Self::RfLeaf { forest } => forest.leaf_count(),
        }
    }

    /// Expected input length, `None` for the intercept (which ignores `x`).
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Self::Intercept => None,
            Self::GroupIndicators { input_dim, .. } => Some(*input_dim),
            Self::LinearEmbedding { dim, .. } => Some(*dim),
            Self::RfLeaf { forest } => Some(forest.n_features()),
        }
    }

    pub fn featurize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(expected) = self.input_dim() {
            if x.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: x.len(),
                });
            }
        }
        Ok(match self {
            Self::Intercept => vec![1.0],
            Self::GroupIndicators { groups, .. } => {
                groups.iter().map(|g| if g.contains(x) { 1.0 } else { 0.0 }).collect()
            }
            Self::LinearEmbedding {
                pca, append_intercept, ..
            } => {
                let mut out = match pca {
                    Some(model) => model.project(x)?,
                    None => x.to_vec(),
                };
                if *append_intercept {
                    out.push(1.0);
                }
                out
            }
            Self::RfLeaf { forest } => forest.leaf_embed(x),
        })
    }

    /// Featurizes every row of `records`.
    pub fn featurize_rows(&self, records: &Matrix) -> Result<Matrix> {
        let d = self.dimension();
        let mut out = Matrix::zeros(records.nrows(), d);
        for (i, row) in records.rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.featurize(row)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_ignores_input() {
        let map = FeatureMap::Intercept;
        assert_eq!(map.featurize(&[3.0, -1.0]).unwrap(), vec![1.0]);
        assert_eq!(map.featurize(&[]).unwrap(), vec![1.0]);
        assert_eq!(map.dimension(), 1);
    }

    #[test]
    fn disjoint_groups_one_hot() {
        let map = FeatureMap::group_indicators(1, equal_width_bins(0, 0.0, 3.0, 3)).unwrap();
        assert_eq!(map.featurize(&[1.5]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(map.featurize(&[-10.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(map.featurize(&[99.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(map.featurize(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn overlapping_groups() {
        let groups = vec![
            GroupRule {
                feature: 0,
                lower: None,
                upper: Some(2.0),
            },
            GroupRule {
                feature: 0,
                lower: Some(1.0),
                upper: None,
            },
            GroupRule {
                feature: 1,
                lower: Some(0.0),
                upper: Some(1.0),
            },
        ];
        let map = FeatureMap::group_indicators(2, groups).unwrap();
        assert_eq!(map.featurize(&[1.5, 0.5]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(map.featurize(&[0.5, 2.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(FeatureMap::group_indicators(
            1,
            vec![GroupRule {
                feature: 3,
                lower: None,
                upper: None
            }]
        )
        .is_err());
    }

    #[test]
    fn embedding_with_intercept() {
        let map = FeatureMap::LinearEmbedding {
            dim: 2,
            pca: None,
            append_intercept: true,
        };
        assert_eq!(map.dimension(), 3);
        assert_eq!(map.featurize(&[0.5, -2.0]).unwrap(), vec![0.5, -2.0, 1.0]);
        assert!(map.featurize(&[0.5]).is_err());
    }

    #[test]
    fn featurize_is_deterministic() {
        let map = FeatureMap::group_indicators(1, equal_width_bins(0, 0.0, 1.0, 4)).unwrap();
        let a = map.featurize(&[0.3]).unwrap();
        let b = map.featurize(&[0.3]).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn serde_round_trip() {
        let map = FeatureMap::group_indicators(1, equal_width_bins(0, 0.0, 1.0, 2)).unwrap();
        let json = serde_json::to_string(&map).unwrap();
        assert!(json.contains("\"kind\":\"group-indicators\""));
        let back: FeatureMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }
}

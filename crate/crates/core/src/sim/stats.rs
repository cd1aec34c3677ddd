//! Evaluation statistics: tilted and per-group risks, Spearman correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `Σ wᵢℓᵢ / Σ wᵢ`.
pub fn tilted_risk(weights: &[f64], losses: &[f64]) -> Result<f64> {
    if weights.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: losses.len(),
        });
    }
    if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| **w < 0.0 || w.is_nan()) {
        return Err(Error::NegativeDirection { index, weight });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData("weights sum to zero".into()));
    }
    Ok(weights.iter().zip(losses).map(|(w, l)| w * l).sum::<f64>() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRisk {
    pub group: usize,
    pub risk: f64,
    pub count: usize,
}

/// Mean loss within each column of the membership matrix `groups[i][j]`.
/// Empty columns are left out.
pub fn group_risks(groups: &[Vec<bool>], losses: &[f64]) -> Result<Vec<GroupRisk>> {
    if groups.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            expected: losses.len(),
            found: groups.len(),
        });
    }
    let width = groups.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; width];
    let mut counts = vec![0usize; width];
    for (row, &loss) in groups.iter().zip(losses) {
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                found: row.len(),
            });
        }
        for (j, &member) in row.iter().enumerate() {
            if member {
                sums[j] += loss;
                counts[j] += 1;
            }
        }
    }
    Ok((0..width)
        .filter(|&j| counts[j] > 0)
        .map(|j| GroupRisk {
            group: j,
            risk: sums[j] / counts[j] as f64,
            count: counts[j],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

/// Largest sample for which the p-value is computed by full enumeration.
const EXACT_MAX: usize = 9;

/// Rank correlation with average ranks for ties and a two-sided p-value.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let m = a.len();
    if m < 3 {
        return Err(Error::EmptyData(format!("spearman needs at least 3 pairs, got {m}")));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::DegenerateData("NaN in spearman input".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let rho = pearson(&ra, &rb).ok_or_else(|| Error::DegenerateData("constant input to spearman".into()))?;
    let p_value = if m <= EXACT_MAX {
        exact_p(&ra, &rb, rho)
    } else {
        t_approx_p(rho, m)
    };
    Ok(Spearman { rho, p_value })
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn t_approx_p(rho: f64, m: usize) -> f64 {
    let df = (m - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Share of all permutations of `rb` whose |ρ| reaches the observed |ρ|.
fn exact_p(ra: &[f64], rb: &[f64], rho: f64) -> f64 {
    let mut perm = rb.to_vec();
    let mut hits = 0u64;
    let mut total = 0u64;
    let target = rho.abs() - 1e-12;
    heap_permutations(&mut perm, &mut |p| {
        total += 1;
        if pearson(ra, p).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

fn heap_permutations(v: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tilted_risk_examples() {
        assert_eq!(tilted_risk(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 0.75);
        assert_eq!(tilted_risk(&[0.0, 1.0, 0.0], &[0.2, 0.7, 0.9]).unwrap(), 0.7);
        assert!(tilted_risk(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(tilted_risk(&[-1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn group_risk_toy() {
        // Groups: {0,1}, {1,2,3}, {} over losses [1,0,1,1].
        let g = vec![
            vec![true, false, false],
            vec![true, true, false],
            vec![false, true, false],
            vec![false, true, false],
        ];
        let r = group_risks(&g, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].group, r[0].risk, r[0].count), (0, 0.5, 2));
        assert_eq!((r[1].group, r[1].count), (1, 3));
        assert!((r[1].risk - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_groups_recover_marginal() {
        let losses = [0.0, 1.0, 1.0, 0.0, 1.0];
        let g: Vec<Vec<bool>> = (0..5).map(|i| vec![i < 2, i >= 2]).collect();
        let r = group_risks(&g, &losses).unwrap();
        let combined = r.iter().map(|x| x.risk * x.count as f64).sum::<f64>() / 5.0;
        assert!((combined - 0.6).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &a).unwrap().rho - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert!((spearman(&a, &rev).unwrap().rho + 1.0).abs() < 1e-15);
        let s = spearman(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        // Rank differences 0,1,1,1,1 give Σd² = 4.
        assert!((s.rho - (1.0 - 6.0 * 4.0 / (5.0 * 24.0))).abs() < 1e-12);
        assert!((s.rho - 0.8).abs() < 1e-12);
        // Exact p against an independent enumeration of rank differences.
        let hits = count_rank_permutations(5, 0.8);
        assert!((s.p_value - hits as f64 / 120.0).abs() < 1e-12);
        assert!(spearman(&a, &[2.0; 5]).is_err());
        assert!(spearman(&a[..2], &a[..2]).is_err());
    }

    /// Independent oracle: counts permutations by the rank-difference formula.
    fn count_rank_permutations(n: usize, rho: f64) -> usize {
        fn rec(n: usize, used: &mut Vec<bool>, pos: usize, d2: usize, out: &mut Vec<usize>) {
            if pos == n {
                out.push(d2);
                return;
            }
            for v in 0..n {
                if !used[v] {
                    used[v] = true;
                    let d = pos.abs_diff(v);
                    rec(n, used, pos + 1, d2 + d * d, out);
                    used[v] = false;
                }
            }
        }
        let mut sums = Vec::new();
        rec(n, &mut vec![false; n], 0, 0, &mut sums);
        let denom = (n * (n * n - 1)) as f64;
        sums.iter()
            .filter(|&&s| (1.0 - 6.0 * s as f64 / denom).abs() >= rho - 1e-12)
            .count()
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn large_sample_p_value_uses_t() {
        let a: Vec<f64> = (0..50).map(f64::from).collect();
        let b: Vec<f64> = (0..50).map(|i| f64::from((i * 7) % 50)).collect();
        let s = spearman(&a, &b).unwrap();
        let df = 48.0;
        let t = s.rho * (df / (1.0 - s.rho * s.rho)).sqrt();
        let expected = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()));
        assert!((s.p_value - expected).abs() < 1e-12);
        assert!(s.p_value > 0.0 && s.p_value <= 1.0);
    }

    proptest! {
        #[test]
        fn uniform_tilt_is_group_of_all_is_mean(losses in prop::collection::vec(0.0f64..=1.0, 1..60)) {
            let m = losses.len();
            let mean = losses.iter().sum::<f64>() / m as f64;
            let tilted = tilted_risk(&vec![1.0; m], &losses).unwrap();
            let groups = group_risks(&vec![vec![true]; m], &losses).unwrap();
            prop_assert!((tilted - mean).abs() < 1e-12);
            prop_assert!((groups[0].risk - mean).abs() < 1e-12);
        }

        #[test]
        fn spearman_in_range(a in prop::collection::vec(-5.0f64..5.0, 3..40), seed in any::<u64>()) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v * 3.1 + (seed.wrapping_mul(i as u64 + 1) % 7) as f64).sin()).collect();
            if let Ok(s) = spearman(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&s.rho));
                prop_assert!((0.0..=1.0).contains(&s.p_value));
            }
        }
    }
}

//! Marginal conformal risk control, the constant-threshold baseline.

use crate::error::{Error, Result};
use crate::loss::{AlphaLevel, StepLoss};

/// `û = sup{u : Σᵢ ℓᵢ(u) + 1 ≤ α(n+1)}`, treating the unseen test loss as 1.
///
/// Returns `+∞` when the constraint never binds and `−∞` when it holds nowhere.
pub fn marginal_crc_threshold(losses: &[StepLoss], alpha: AlphaLevel) -> Result<f64> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::EmptyData("no calibration losses".into()));
    }
    let a = alpha.value();
    let n1 = (n + 1) as f64;
    if a * n1 <= 1.0 {
        return Err(Error::InfeasibleLevel { alpha: a, n });
    }
    let budget = a * n1 - 1.0;
    let eps = 1e-12 * n1;
    let mut total: f64 = losses.iter().map(StepLoss::lowest).sum();
    if total > budget + eps {
        return Ok(f64::NEG_INFINITY);
    }
    let mut jumps: Vec<(f64, f64)> = losses.iter().flat_map(StepLoss::jumps).collect();
    jumps.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut i = 0;
    while i < jumps.len() {
        let at = jumps[i].0;
        while i < jumps.len() && jumps[i].0 == at {
            total += jumps[i].1;
            i += 1;
        }
        // ℓ is left-continuous, so the sum at `at` itself excludes this jump.
        if total > budget + eps {
            return Ok(at);
        }
    }
    Ok(f64::INFINITY)
}

/// `⌈(1−α)(n+1)⌉`-th smallest score (split conformal quantile); `+∞` when that
/// rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: AlphaLevel) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyData("no scores".into()));
    }
    let n = scores.len();
    let rank = ((1.0 - alpha.value()) * (n + 1) as f64 - 1e-9).ceil() as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank.max(1) - 1])
}

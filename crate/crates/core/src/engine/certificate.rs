//! Stationarity certificates.
//!
//! The subdifferential of `J̃` at `θ` is
//! `{(Σᵢ Φᵢ gᵢ + (1−α)Φₜ)/(n+1) + γθ : gᵢ ∈ [ℓᵢ(uᵢ) − α, ℓᵢ(uᵢ⁺) − α]}`.
//! The residual is the norm of its minimum-norm element. For a direction `w`
//! with `Φᵢ·w ≥ 0` everywhere, `w·G` ranges over an interval whose endpoints
//! use all-left and all-right loss values; the tilted risk bound holds when
//! that interval contains zero.

use serde::{Deserialize, Serialize};

use super::{CalibrationSet, FitOutcome, FitResult, Problem, Regularizer};
use crate::error::{Error, Result};
use crate::loss::AlphaLevel;
use crate::matrix::{dot, norm};

/// Range of the directional derivative `w·G` over the subdifferential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalResidual {
    pub lower: f64,
    pub upper: f64,
}

impl DirectionalResidual {
    /// Distance of zero from `[lower, upper]`.
    pub fn distance(&self) -> f64 {
        self.lower.max(-self.upper).max(0.0)
    }

    pub fn certifies(&self, tolerance: f64) -> bool {
        self.distance() <= tolerance
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Certificate {
    pub residual: f64,
    pub g_lo: Vec<f64>,
    pub g_hi: Vec<f64>,
}

impl Certificate {
    pub fn compute(p: &Problem<'_>, theta: &[f64], test: &[f64], hint: Option<&[f64]>) -> Self {
        let a = p.alpha.value();
        let n1 = p.n1();
        let gamma = p.reg.gamma();
        let base: Vec<f64> = test
            .iter()
            .zip(theta)
            .map(|(t, th)| (1.0 - a) * t / n1 + gamma * th)
            .collect();
        let mut g_lo = base.clone();
        let mut g_hi = base.clone();
        let mut g = base;
        let mut lo = Vec::with_capacity(p.n());
        let mut hi = Vec::with_capacity(p.n());
        let mut choice = Vec::with_capacity(p.n());
        for (i, (s, loss)) in p.samples.iter().zip(p.calib.losses()).enumerate() {
            let u = s.dot(theta);
            let tol = 1e-9 * (1.0 + u.abs());
            let l = loss.eval(u - tol) - a;
            let h = loss.eval_right(u + tol) - a;
            let c = hint.map_or(l, |m| m[i].clamp(l, h));
            s.axpy(l / n1, &mut g_lo);
            s.axpy(h / n1, &mut g_hi);
            s.axpy(c / n1, &mut g);
            lo.push(l);
            hi.push(h);
            choice.push(c);
        }

        // Coordinate descent over the samples whose multiplier is free.
        let free: Vec<usize> = (0..p.n())
            .filter(|&i| hi[i] > lo[i] && p.samples[i].norm2 > 0.0)
            .collect();
        for _ in 0..200 {
            let mut moved = 0.0_f64;
            for &i in &free {
                let s = &p.samples[i];
                let step = -n1 * s.dot(&g) / s.norm2;
                let new = (choice[i] + step).clamp(lo[i], hi[i]);
                let delta = new - choice[i];
                if delta != 0.0 {
                    choice[i] = new;
                    s.axpy(delta / n1, &mut g);
                    moved = moved.max(delta.abs());
                }
            }
            if moved < 1e-13 {
                break;
            }
        }
        Self {
            residual: norm(&g),
            g_lo,
            g_hi,
        }
    }
}

pub(super) fn directional(
    p: &Problem<'_>,
    fit: &FitResult,
    test: &[f64],
    directions: &[Vec<f64>],
) -> Result<Vec<DirectionalResidual>> {
    if fit.outcome == FitOutcome::Unbounded {
        return Err(Error::InvalidConfig("no certificate for an unbounded fit".into()));
    }
    let d = p.d();
    for w in directions {
        if w.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: w.len(),
            });
        }
        let trivially_nonnegative =
            p.nonnegative_features && test.iter().all(|&v| v >= 0.0) && w.iter().all(|&v| v >= 0.0);
        if !trivially_nonnegative {
            let scale = 1e-12 * (1.0 + norm(w));
            for (i, s) in p.samples.iter().enumerate() {
                let weight = s.dot(w);
                if weight < -scale * (1.0 + s.norm2.sqrt()) {
                    return Err(Error::NegativeDirection { index: i, weight });
                }
            }
            let weight = dot(test, w);
            if weight < -scale * (1.0 + norm(test)) {
                return Err(Error::NegativeDirection { index: p.n(), weight });
            }
        }
    }
    let cert = Certificate::compute(p, &fit.theta_hat, test, None);
    Ok(directions
        .iter()
        .map(|w| DirectionalResidual {
            lower: dot(w, &cert.g_lo),
            upper: dot(w, &cert.g_hi),
        })
        .collect())
}

/// Directional residual intervals of `fit` for each direction `w`, which must
/// give a nonnegative weight `Φ(x)ᵀw` at every calibration point and the test point.
pub fn stationarity_certificate(
    fit: &FitResult,
    calib: &CalibrationSet,
    test_feature: &[f64],
    alpha: AlphaLevel,
    reg: &Regularizer,
    directions: &[Vec<f64>],
) -> Result<Vec<DirectionalResidual>> {
    super::check_dims(calib, test_feature)?;
    super::check_dim(calib.dim(), fit.theta_hat.len())?;
    let p = Problem::new(calib, alpha, *reg);
    directional(&p, fit, test_feature, directions)
}

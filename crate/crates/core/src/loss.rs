//! Monotone step losses.
//!
//! A [`StepLoss`] stores one sample's loss curve `u ↦ ℓ(u)` as an exact
//! left-continuous step function in the normalized orientation: the loss is
//! nondecreasing in the internal parameter `u`, so a larger `u` always means a
//! smaller prediction set. Its antiderivative
//!
//! ```text
//! I(u) = ∫_{b₁}^{u} (ℓ(t) − α) dt = (v₀ − α)(u − b₁) + Σⱼ (vⱼ − vⱼ₋₁)·max(0, u − bⱼ)
//! ```
//!
//! is convex and piecewise linear with slopes `vⱼ − α`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VALUE_SLACK: f64 = 1e-9;

/// Target risk level `α ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlphaLevel(f64);

impl AlphaLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidAlpha(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AlphaLevel {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<AlphaLevel> for f64 {
    fn from(alpha: AlphaLevel) -> f64 {
        alpha.0
    }
}

/// Left-continuous nondecreasing step function with values in `[0, 1]`.
///
/// With breakpoints `b₁ < … < b_k` and values `v₀ ≤ … ≤ v_k`:
/// `ℓ(u) = v₀` for `u ≤ b₁`, `ℓ(u) = vⱼ` for `u ∈ (bⱼ, bⱼ₊₁]`, `ℓ(u) = v_k` for `u > b_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepLoss {
    /// Builds a loss from sorted breakpoints and `breakpoints.len() + 1` values.
    ///
    /// Duplicate breakpoints are merged (the later, larger value wins) and
    /// zero-height jumps are dropped.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidLoss(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                values.len()
            )));
        }
        if let Some(b) = breakpoints.iter().find(|b| !b.is_finite()) {
            return Err(Error::InvalidLoss(format!("non-finite breakpoint {b}")));
        }
        if breakpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidLoss("breakpoints must be sorted".into()));
        }
        let values = values.into_iter().map(clamp_value).collect::<Result<Vec<_>>>()?;
        if values.windows(2).any(|w| w[1] < w[0] - VALUE_SLACK) {
            return Err(Error::InvalidLoss("values must be nondecreasing".into()));
        }

        let mut out_b = Vec::with_capacity(breakpoints.len());
        let mut out_v = Vec::with_capacity(values.len());
        out_v.push(values[0]);
        for (j, &b) in breakpoints.iter().enumerate() {
            let v = values[j + 1].max(*out_v.last().unwrap());
            if out_b.last() == Some(&b) {
                *out_v.last_mut().unwrap() = v;
            } else {
                out_b.push(b);
                out_v.push(v);
            }
        }
        // Drop zero-height jumps.
        let mut breakpoints = Vec::with_capacity(out_b.len());
        let mut values = Vec::with_capacity(out_v.len());
        values.push(out_v[0]);
        for (j, &b) in out_b.iter().enumerate() {
            if out_v[j + 1] > *values.last().unwrap() {
                breakpoints.push(b);
                values.push(out_v[j + 1]);
            }
        }
        Ok(Self { breakpoints, values })
    }

    /// Builds a loss from a base level and unsorted `(position, height)` jumps.
    /// Jumps at equal positions accumulate.
    pub fn from_jumps(base: f64, mut jumps: Vec<(f64, f64)>) -> Result<Self> {
        if jumps.iter().any(|&(_, h)| h < 0.0) {
            return Err(Error::InvalidLoss("negative jump height".into()));
        }
        if let Some(&(b, _)) = jumps.iter().find(|(b, _)| !b.is_finite()) {
            return Err(Error::InvalidLoss(format!("non-finite breakpoint {b}")));
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints = Vec::with_capacity(jumps.len());
        let mut values = vec![base];
        let mut level = base;
        for (b, h) in jumps {
            level += h;
            if breakpoints.last() == Some(&b) {
                *values.last_mut().unwrap() = level;
            } else {
                breakpoints.push(b);
                values.push(level);
            }
        }
        Self::new(breakpoints, values)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    /// Loss jumping from 0 to 1 just after `at`.
    pub fn single_step(at: f64) -> Result<Self> {
        Self::new(vec![at], vec![0.0, 1.0])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `ℓ(u)`, left-continuous.
    pub fn eval(&self, u: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b < u)]
    }

    /// Right limit `ℓ(u⁺)`.
    pub fn eval_right(&self, u: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= u)]
    }

    /// Value for `u → −∞`.
    pub fn lowest(&self) -> f64 {
        self.values[0]
    }

    /// Value for `u → +∞`.
    pub fn highest(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Jumps `(bⱼ, vⱼ − vⱼ₋₁)`, all heights strictly positive.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints
            .iter()
            .zip(self.values.windows(2))
            .map(|(&b, v)| (b, v[1] - v[0]))
    }

    /// Antiderivative anchor: `b₁`, or 0 for a constant loss.
    pub fn anchor(&self) -> f64 {
        self.breakpoints.first().copied().unwrap_or(0.0)
    }

    /// `I(u) = ∫_{anchor}^{u} (ℓ(t) − α) dt`.
    pub fn antiderivative(&self, alpha: AlphaLevel, u: f64) -> f64 {
        let a = alpha.value();
        let mut total = (self.values[0] - a) * (u - self.anchor());
        for (b, h) in self.jumps() {
            if u > b {
                total += h * (u - b);
            } else {
                break;
            }
        }
        total
    }

    /// Subdifferential `[ℓ(u) − α, ℓ(u⁺) − α]` of the antiderivative at `u`.
    pub fn antiderivative_subgradient(&self, alpha: AlphaLevel, u: f64) -> (f64, f64) {
        let a = alpha.value();
        (self.eval(u) - a, self.eval_right(u) - a)
    }

    /// `sup{u : ℓ(u) ≤ α}`: `+∞` when the loss never exceeds `α`, `−∞` when
    /// it exceeds `α` everywhere.
    pub fn crossing_threshold(&self, alpha: AlphaLevel) -> f64 {
        let a = alpha.value();
        if self.values[0] > a {
            return f64::NEG_INFINITY;
        }
        match self.values[1..].iter().position(|&v| v > a) {
            Some(j) => self.breakpoints[j],
            None => f64::INFINITY,
        }
    }

    /// Loss with every breakpoint shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.iter().map(|b| b + delta).collect(),
            values: self.values.clone(),
        }
    }
}

fn clamp_value(v: f64) -> Result<f64> {
    if !(-VALUE_SLACK..=1.0 + VALUE_SLACK).contains(&v) || v.is_nan() {
        return Err(Error::InvalidLoss(format!("value {v} outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

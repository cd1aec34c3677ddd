//! Calibration engine.
//!
//! For a test point with features `Φₜ` the engine minimizes
//!
//! ```text
//! J̃(θ) = 1/(n+1) Σᵢ Iᵢ(Φᵢ·θ) + (1−α)/(n+1) · Φₜ·θ + R(θ)
//! ```
//!
//! where `Iᵢ` is the antiderivative of sample `i`'s step loss. The objective
//! is convex and piecewise linear (plus `γ/2‖θ‖²` under ridge), and any
//! stationary point certifies
//!
//! ```text
//! 1/(n+1) Σᵢ λ(Xᵢ)(ℓᵢ(Φᵢ·θ̂) − α) + (1−α)/(n+1) λ(Xₜ) ≤ −r(λ)
//! ```
//!
//! for every nonnegative `λ = Φᵀw`, which is where the tilted risk guarantee
//! comes from. Solvers:
//!
//! * `d = 1`: exact breakpoint scan, returning the largest minimizer.
//! * `d > 1`, no regularizer: bounded-variable dual simplex on the dual LP,
//!   whose multipliers are `θ`. Only the right-hand side depends on the test
//!   point, so the previous optimal basis stays dual feasible and warm starts
//!   take a handful of pivots.
//! * `d > 1`, ridge: dual coordinate ascent on the box-constrained dual QP.
//! * optional plain subgradient descent with `c/√t` steps.

mod baseline;
mod batch;
mod certificate;
mod ridge;
mod scan;
mod simplex;
mod subgradient;

use serde::{Deserialize, Serialize};

pub use baseline::{conformal_quantile, marginal_crc_threshold};
pub use batch::{calibrate_batch, BatchOptions};
pub use certificate::{stationarity_certificate, DirectionalResidual};

use crate::error::{Error, Result};
use crate::loss::{AlphaLevel, StepLoss};
use crate::matrix::{dot, norm, Matrix};

/// Aligned calibration features `Φ(Xᵢ)` and losses `ℓᵢ` (normalized orientation).
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    features: Matrix,
    losses: Vec<StepLoss>,
}

impl CalibrationSet {
    pub fn new(features: Matrix, losses: Vec<StepLoss>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::EmptyData("calibration set needs at least one point".into()));
        }
        if features.nrows() != losses.len() {
            return Err(Error::DimensionMismatch {
                expected: losses.len(),
                found: features.nrows(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::EmptyData("feature dimension must be positive".into()));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite calibration feature".into()));
        }
        Ok(Self { features, losses })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn losses(&self) -> &[StepLoss] {
        &self.losses
    }

    /// Columns of the feature matrix that are zero on every calibration point.
    pub fn zero_columns(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.features.rows().all(|r| r[j] == 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Regularizer {
    #[default]
    None,
    /// `R(θ) = γ/2 ‖θ‖²`.
    Ridge { gamma: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::None => Ok(()),
            Self::Ridge { gamma } if gamma.is_finite() && gamma >= 0.0 => Ok(()),
            Self::Ridge { gamma } => Err(Error::InvalidConfig(format!(
                "ridge gamma {gamma} must be finite and >= 0"
            ))),
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Ridge { gamma } => gamma,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        0.5 * self.gamma() * dot(theta, theta)
    }

    /// `r(w) = d/dε R(θ + εw)|₀`.
    pub fn directional_derivative(&self, theta: &[f64], w: &[f64]) -> f64 {
        self.gamma() * dot(theta, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    /// Exact scan for `d = 1`, dual simplex or dual coordinate ascent otherwise.
    #[default]
    Auto,
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Pivots (simplex), sweeps (coordinate ascent) or steps (subgradient).
    pub max_iterations: usize,
    /// Subgradient step `step_scale / √t`.
    pub step_scale: f64,
    /// Stationarity tolerance τ; `None` uses `1e-6 · (1 + median ‖Φᵢ‖)`.
    pub tolerance: Option<f64>,
    /// Starting point for the subgradient method.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            max_iterations: 20_000,
            step_scale: 1.0,
            tolerance: None,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("tolerance {t} must be positive")));
            }
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidConfig("step_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitOutcome {
    /// A stationary point was found (check `converged` for the certificate).
    Optimal,
    /// The objective decreases without bound along `ray`; thresholds are infinite.
    Unbounded,
    /// Iteration budget exhausted; `theta_hat` is the best iterate.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// Norm of the minimum-norm subgradient at `theta_hat` (`∞` when unbounded).
    pub stationarity_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub outcome: FitOutcome,
    /// Recession direction when `outcome` is `Unbounded`.
    pub ray: Option<Vec<f64>>,
    /// Threshold `Φₜ·θ̂` of the test point this fit was solved for.
    pub test_threshold: f64,
}

/// `Φ(x)ᵀθ̂` in normalized orientation. For an unbounded fit the threshold is
/// `+∞` where the recession ray raises `Φ(x)ᵀθ` and `−∞` elsewhere.
pub fn predict_threshold(fit: &FitResult, phi_x: &[f64]) -> Result<f64> {
    if phi_x.len() != fit.theta_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.theta_hat.len(),
            found: phi_x.len(),
        });
    }
    Ok(threshold_along(&fit.theta_hat, fit.ray.as_deref(), phi_x))
}

fn threshold_along(theta: &[f64], ray: Option<&[f64]>, phi: &[f64]) -> f64 {
    if let Some(ray) = ray {
        let s = dot(ray, phi);
        let scale = norm(ray) * norm(phi);
        // Points the ray does not move get the conservative (largest) set.
        return if s > 1e-12 * scale {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
    }
    dot(theta, phi)
}

/// `α − r(w) / E[λ_w]`: the certified tilted-risk level for direction `w`.
pub fn guarantee_bound(
    alpha: AlphaLevel,
    reg: &Regularizer,
    fit: &FitResult,
    direction: &[f64],
    mean_weight: f64,
) -> Result<f64> {
    if !(mean_weight > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "mean weight {mean_weight} must be positive"
        )));
    }
    if direction.len() != fit.theta_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.theta_hat.len(),
            found: direction.len(),
        });
    }
    Ok(alpha.value() - reg.directional_derivative(&fit.theta_hat, direction) / mean_weight)
}

/// `J̃(θ)`.
pub fn objective_value(
    theta: &[f64],
    calib: &CalibrationSet,
    test_feature: &[f64],
    alpha: AlphaLevel,
    reg: &Regularizer,
) -> Result<f64> {
    check_dims(calib, test_feature)?;
    check_dim(calib.dim(), theta.len())?;
    let n1 = (calib.len() + 1) as f64;
    let sum: f64 = calib
        .features()
        .rows()
        .zip(calib.losses())
        .map(|(phi, loss)| loss.antiderivative(alpha, dot(phi, theta)))
        .sum();
    Ok(sum / n1 + (1.0 - alpha.value()) / n1 * dot(test_feature, theta) + reg.value(theta))
}

/// Subgradient of `J̃` using left loss values at breakpoints.
pub fn objective_subgradient(
    theta: &[f64],
    calib: &CalibrationSet,
    test_feature: &[f64],
    alpha: AlphaLevel,
    reg: &Regularizer,
) -> Result<Vec<f64>> {
    check_dims(calib, test_feature)?;
    check_dim(calib.dim(), theta.len())?;
    let n1 = (calib.len() + 1) as f64;
    let a = alpha.value();
    let mut g: Vec<f64> = test_feature.iter().map(|v| (1.0 - a) * v).collect();
    for (phi, loss) in calib.features().rows().zip(calib.losses()) {
        let slope = loss.eval(dot(phi, theta)) - a;
        for (gj, p) in g.iter_mut().zip(phi) {
            *gj += slope * p;
        }
    }
    let gamma = reg.gamma();
    for (gj, t) in g.iter_mut().zip(theta) {
        *gj = *gj / n1 + gamma * t;
    }
    Ok(g)
}

/// Solves `argmin J̃` for one test point (cold start).
pub fn fit_threshold_function(
    calib: &CalibrationSet,
    test_feature: &[f64],
    alpha: AlphaLevel,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    Calibrator::new(calib, alpha, *reg, cfg.clone())?.fit(test_feature)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_dims(calib: &CalibrationSet, test_feature: &[f64]) -> Result<()> {
    check_dim(calib.dim(), test_feature.len())?;
    if test_feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("non-finite test feature".into()));
    }
    Ok(())
}

/// One calibration point in sparse form.
#[derive(Debug, Clone)]
pub(crate) struct Sample {
    idx: Vec<usize>,
    val: Vec<f64>,
    norm2: f64,
    /// Steps `steps.start..steps.end` in the flattened step arrays.
    steps: std::ops::Range<usize>,
}

impl Sample {
    fn dot(&self, v: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&j, x)| x * v[j]).sum()
    }

    fn axpy(&self, scale: f64, out: &mut [f64]) {
        for (&j, x) in self.idx.iter().zip(&self.val) {
            out[j] += scale * x;
        }
    }
}

/// The calibration problem in the form the solvers consume.
///
/// With `F = (n+1)·J̃` and hinge form
/// `Iᵢ(u) = (v₀ − α)(u − b₁) + Σⱼ hⱼ max(0, u − bⱼ)`,
/// `F(θ) = gᵀθ + Σₖ hₖ max(0, Φ_{s(k)}·θ − bₖ) + Γ/2 ‖θ‖² + const`
/// with `g = Σᵢ (v₀ᵢ − α)Φᵢ + (1−α)Φₜ` and `Γ = (n+1)γ`.
#[derive(Debug)]
pub(crate) struct Problem<'a> {
    calib: &'a CalibrationSet,
    alpha: AlphaLevel,
    reg: Regularizer,
    samples: Vec<Sample>,
    step_sample: Vec<usize>,
    step_b: Vec<f64>,
    step_h: Vec<f64>,
    /// `Σᵢ (v₀ᵢ − α)Φᵢ`.
    base: Vec<f64>,
    nonnegative_features: bool,
}

impl<'a> Problem<'a> {
    fn new(calib: &'a CalibrationSet, alpha: AlphaLevel, reg: Regularizer) -> Self {
        let d = calib.dim();
        let a = alpha.value();
        let mut samples = Vec::with_capacity(calib.len());
        let mut step_sample = Vec::new();
        let mut step_b = Vec::new();
        let mut step_h = Vec::new();
        let mut base = vec![0.0; d];
        for (i, (phi, loss)) in calib.features().rows().zip(calib.losses()).enumerate() {
            let (idx, val): (Vec<usize>, Vec<f64>) = phi
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .unzip();
            let start = step_b.len();
            for (b, h) in loss.jumps() {
                step_sample.push(i);
                step_b.push(b);
                step_h.push(h);
            }
            let sample = Sample {
                norm2: val.iter().map(|v| v * v).sum(),
                idx,
                val,
                steps: start..step_b.len(),
            };
            sample.axpy(loss.lowest() - a, &mut base);
            samples.push(sample);
        }
        Self {
            calib,
            alpha,
            reg,
            samples,
            step_sample,
            step_b,
            step_h,
            base,
            nonnegative_features: calib.features().as_slice().iter().all(|&v| v >= 0.0),
        }
    }

    fn n(&self) -> usize {
        self.samples.len()
    }

    fn d(&self) -> usize {
        self.calib.dim()
    }

    fn n_steps(&self) -> usize {
        self.step_b.len()
    }

    fn n1(&self) -> f64 {
        (self.n() + 1) as f64
    }

    fn gamma_scaled(&self) -> f64 {
        self.reg.gamma() * self.n1()
    }

    /// `g = base + (1−α)Φₜ`.
    fn linear_term(&self, test: &[f64]) -> Vec<f64> {
        let c = 1.0 - self.alpha.value();
        self.base.iter().zip(test).map(|(b, t)| b + c * t).collect()
    }

    fn objective(&self, theta: &[f64], test: &[f64]) -> f64 {
        let sum: f64 = self
            .samples
            .iter()
            .zip(self.calib.losses())
            .map(|(s, loss)| loss.antiderivative(self.alpha, s.dot(theta)))
            .sum();
        sum / self.n1() + (1.0 - self.alpha.value()) / self.n1() * dot(test, theta) + self.reg.value(theta)
    }
}

/// Reusable solver state for warm starts across test points.
#[derive(Debug, Clone, Default)]
pub enum SolverState {
    #[default]
    Empty,
    Simplex(Box<simplex::SimplexState>),
    Ridge(ridge::RidgeState),
}

/// A prepared calibration problem that can be solved for many test points.
#[derive(Debug)]
pub struct Calibrator<'a> {
    problem: Problem<'a>,
    cfg: SolverConfig,
    tolerance: f64,
}

impl<'a> Calibrator<'a> {
    pub fn new(calib: &'a CalibrationSet, alpha: AlphaLevel, reg: Regularizer, cfg: SolverConfig) -> Result<Self> {
        reg.validate()?;
        cfg.validate()?;
        let tolerance = cfg.tolerance.unwrap_or_else(|| default_tolerance(calib));
        Ok(Self {
            problem: Problem::new(calib, alpha, reg),
            cfg,
            tolerance,
        })
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn calibration(&self) -> &CalibrationSet {
        self.problem.calib
    }

    pub fn alpha(&self) -> AlphaLevel {
        self.problem.alpha
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.problem.reg
    }

    /// Cold-start fit.
    pub fn fit(&self, test_feature: &[f64]) -> Result<FitResult> {
        self.fit_with_state(test_feature, &mut SolverState::Empty)
    }

    /// Fit reusing (and updating) `state` from a previous solve.
    pub fn fit_with_state(&self, test_feature: &[f64], state: &mut SolverState) -> Result<FitResult> {
        check_dims(self.problem.calib, test_feature)?;
        let p = &self.problem;
        let raw = match self.cfg.method {
            SolverMethod::Subgradient => subgradient::solve(p, test_feature, &self.cfg)?,
            SolverMethod::Auto if p.d() == 1 => scan::solve(p, test_feature),
            SolverMethod::Auto if p.reg.gamma() == 0.0 => {
                simplex::solve(p, test_feature, self.cfg.max_iterations, state)?
            }
            SolverMethod::Auto => ridge::solve(p, test_feature, self.cfg.max_iterations, state),
        };
        Ok(self.finish(raw, test_feature))
    }

    fn finish(&self, raw: RawSolution, test: &[f64]) -> FitResult {
        let p = &self.problem;
        let test_threshold = threshold_along(&raw.theta, raw.ray.as_deref(), test);
        match raw.status {
            RawStatus::Unbounded => FitResult {
                objective: if raw.flat {
                    p.objective(&raw.theta, test)
                } else {
                    f64::NEG_INFINITY
                },
                theta_hat: raw.theta,
                stationarity_residual: f64::INFINITY,
                iterations: raw.iterations,
                converged: false,
                tolerance: self.tolerance,
                outcome: FitOutcome::Unbounded,
                ray: raw.ray,
                test_threshold,
            },
            RawStatus::Optimal | RawStatus::IterationLimit => {
                let cert = certificate::Certificate::compute(p, &raw.theta, test, raw.multipliers.as_deref());
                let converged = cert.residual <= self.tolerance;
                let outcome = if converged {
                    FitOutcome::Optimal
                } else {
                    FitOutcome::IterationLimit
                };
                FitResult {
                    objective: p.objective(&raw.theta, test),
                    theta_hat: raw.theta,
                    stationarity_residual: cert.residual,
                    iterations: raw.iterations,
                    converged,
                    tolerance: self.tolerance,
                    outcome,
                    ray: None,
                    test_threshold,
                }
            }
        }
    }

    /// Directional residual intervals of `fit` at `test_feature` for each
    /// nonnegative direction.
    pub fn directional_residuals(
        &self,
        fit: &FitResult,
        test_feature: &[f64],
        directions: &[Vec<f64>],
    ) -> Result<Vec<DirectionalResidual>> {
        certificate::directional(&self.problem, fit, test_feature, directions)
    }
}

pub(crate) fn default_tolerance(calib: &CalibrationSet) -> f64 {
    let mut norms: Vec<f64> = calib.features().rows().map(norm).collect();
    norms.sort_by(f64::total_cmp);
    let median = norms[norms.len() / 2];
    1e-6 * (1.0 + median)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RawStatus {
    Optimal,
    Unbounded,
    IterationLimit,
}

#[derive(Debug)]
pub(crate) struct RawSolution {
    theta: Vec<f64>,
    status: RawStatus,
    iterations: usize,
    ray: Option<Vec<f64>>,
    /// Per-sample subgradient choices `gᵢ ∈ ∂Iᵢ` that the solver certified.
    multipliers: Option<Vec<f64>>,
    /// Unbounded only because the objective is flat towards infinity.
    flat: bool,
}

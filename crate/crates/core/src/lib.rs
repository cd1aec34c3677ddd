//! Automatically adaptive conformal risk control.
//!
//! Given per-sample monotone loss curves and a feature map `Φ`, this crate
//! computes per-input thresholds `λ(x) = Φ(x)ᵀθ` that control a risk at level
//! `α` marginally, within every group encoded by `Φ`, and under every
//! nonnegative tilt in the span of `Φ`.
//!
//! Module map:
//!
//! * [`loss`]: exact step-function losses and their antiderivatives.
//! * [`features`]: function classes (intercept, group indicators, linear
//!   embeddings with optional PCA, random-forest leaf groups).
//! * [`engine`]: the calibration objective, its solvers, the marginal CRC
//!   baseline and the stationarity certificate.
//! * [`tasks`]: interval regression and segmentation recall losses.
//! * [`sim`]: synthetic generators, evaluation statistics and the repeated
//!   split experiment runner.
//! * [`io`]: embedding files and segmentation containers.

#![deny(unsafe_code)]

pub mod engine;
pub mod error;
pub mod features;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod rng;
pub mod sim;
pub mod tasks;

pub use engine::{
    calibrate_batch, fit_threshold_function, guarantee_bound, marginal_crc_threshold, objective_subgradient,
    objective_value, predict_threshold, stationarity_certificate, BatchOptions, CalibrationSet, Calibrator,
    DirectionalResidual, FitOutcome, FitResult, Regularizer, SolverConfig, SolverMethod,
};
pub use error::{Error, Result};
pub use features::{FeatureMap, GroupRule, PcaModel, RandomForest, RfParams};
pub use loss::{AlphaLevel, StepLoss};
pub use matrix::Matrix;
pub use sim::{EvalReport, ExperimentConfig, SplitPlan};
pub use tasks::{Orientation, SegmentationSample};

//! `aacrc calibrate`: fit one threshold per test record.

use std::path::{Path, PathBuf};

use aacrc_core::features::equal_width_bins;
use aacrc_core::sim::{FunctionClassSpec, TaskKind};
use aacrc_core::tasks::recall_loss;
use aacrc_core::{
    calibrate_batch, marginal_crc_threshold, AlphaLevel, CalibrationSet, FeatureMap, FitOutcome, FitResult, Matrix,
    Regularizer, StepLoss,
};
use serde_json::json;

use crate::config::{task_name, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{
    align_embedding, ensure_unique, read_embedding_file, read_records, read_segmentation_file, write_certificates,
    write_meta, write_thresholds, Meta, FORMAT_VERSION,
};
use crate::{CalibrateArgs, ClassKind};

/// Calibration losses and raw inputs, in file order.
struct Side {
    ids: Vec<u64>,
    /// Raw record features (regression only).
    features: Option<Matrix>,
    /// `None` for the test side, whose labels are never read.
    losses: Option<Vec<StepLoss>>,
}

pub fn run(args: &CalibrateArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(alpha) = args.alpha {
        config.experiment.alpha = AlphaLevel::new(alpha)?;
    }
    if let Some(gamma) = args.gamma {
        config.experiment.regularizer = if gamma == 0.0 {
            Regularizer::None
        } else {
            Regularizer::Ridge { gamma }
        };
        config.experiment.regularizer.validate()?;
    }
    if let Some(seed) = args.seed {
        config.experiment.split.seed = seed;
    }
    let experiment = &config.experiment;
    let task = experiment.task;
    let alpha = experiment.alpha;
    let orientation = task.orientation();

    let mut calib = load_side(task, &args.calibration, true)?;
    let test = load_side(task, &args.test, false)?;
    if calib.ids.is_empty() {
        return Err(CliError::Data(format!(
            "{}: empty calibration set",
            args.calibration.display()
        )));
    }
    if test.ids.is_empty() {
        return Err(CliError::Data(format!("{}: empty test set", args.test.display())));
    }
    let losses = calib.losses.take().expect("calibration side carries losses");

    let base_meta = |command: &'static str, details: serde_json::Value| Meta {
        format: "aacrc-thresholds",
        version: FORMAT_VERSION,
        command,
        seed: config.seed(),
        details,
    };

    if args.baseline.is_some() {
        let u = marginal_crc_threshold(&losses, alpha)?;
        let native = orientation.to_native(u);
        write_thresholds(&args.out, "crc_threshold", &test.ids, &vec![native; test.ids.len()])?;
        write_meta(
            &args.out,
            &base_meta(
                "calibrate --baseline crc",
                json!({
                    "task": task_name(task),
                    "alpha": alpha.value(),
                    "calibration": calib.ids.len(),
                    "test": test.ids.len(),
                    "crc_threshold": native,
                }),
            ),
        )?;
        println!("marginal CRC threshold {native} for {} test records", test.ids.len());
        return Ok(());
    }

    let chosen = resolve_class(args.function_class, &experiment.function_class);
    let (class, calib_phi, test_phi) = featurize(args, task, &chosen, &calib, &test)?;
    let set = CalibrationSet::new(calib_phi, losses)?;
    let fits = calibrate_batch(
        &set,
        &test_phi,
        alpha,
        &experiment.regularizer,
        &experiment.solver,
        &experiment.batch,
    )?;
    let fits: Vec<FitResult> = fits
        .into_iter()
        .zip(&test.ids)
        .map(|(f, id)| f.map_err(|e| CliError::Data(format!("test record {id}: {e}"))))
        .collect::<CliResult<_>>()?;

    let native: Vec<f64> = fits.iter().map(|f| orientation.to_native(f.test_threshold)).collect();
    write_thresholds(&args.out, "threshold", &test.ids, &native)?;
    let certificate = args
        .certificate
        .clone()
        .unwrap_or_else(|| default_certificate_path(&args.out));
    write_certificates(&certificate, &test.ids, &fits)?;

    let unbounded = fits.iter().filter(|f| f.outcome == FitOutcome::Unbounded).count();
    let failing: Vec<u64> = fits
        .iter()
        .zip(&test.ids)
        .filter(|(f, _)| f.outcome != FitOutcome::Unbounded && !f.converged)
        .map(|(_, &id)| id)
        .collect();
    write_meta(
        &args.out,
        &base_meta(
            "calibrate",
            json!({
                "task": task_name(task),
                "alpha": alpha.value(),
                "function_class": class,
                "dimension": set.dim(),
                "regularizer": experiment.regularizer,
                "calibration": calib.ids.len(),
                "test": test.ids.len(),
                "unbounded": unbounded,
                "not_converged": failing.len(),
                "certificate": certificate.display().to_string(),
            }),
        ),
    )?;
    println!(
        "calibrated {} thresholds (d = {}, {unbounded} unbounded) into {}",
        test.ids.len(),
        set.dim(),
        args.out.display()
    );
    if !failing.is_empty() {
        return Err(CliError::Certificate(format!(
            "{} fits exceed their stationarity tolerance (first id {}); see {}",
            failing.len(),
            failing[0],
            certificate.display()
        )));
    }
    Ok(())
}

pub fn default_certificate_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".certificate.csv");
    PathBuf::from(name)
}

fn load_side(task: TaskKind, path: &Path, with_losses: bool) -> CliResult<Side> {
    let wrap = |e: aacrc_core::Error| CliError::Data(format!("{}: {e}", path.display()));
    let side = match task {
        TaskKind::Regression => {
            let records = read_records(path)?;
            let losses = if with_losses {
                let residuals = records.residuals().ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: need an `abs_residual` column or both `y` and `f_hat`",
                        path.display()
                    ))
                })?;
                Some(
                    residuals
                        .iter()
                        .map(|&r| {
                            if r.is_finite() && r >= 0.0 {
                                StepLoss::single_step(-r).map_err(wrap)
                            } else {
                                Err(CliError::Data(format!("{}: bad residual {r}", path.display())))
                            }
                        })
                        .collect::<CliResult<_>>()?,
                )
            } else {
                None
            };
            Side {
                ids: records.ids,
                features: Some(records.features),
                losses,
            }
        }
        TaskKind::Segmentation => {
            let (ids, samples) = read_segmentation_file(path)?;
            let losses = if with_losses {
                Some(
                    samples
                        .iter()
                        .zip(&ids)
                        .map(|(s, id)| {
                            recall_loss(s).map_err(|e| CliError::Data(format!("{}: image {id}: {e}", path.display())))
                        })
                        .collect::<CliResult<_>>()?,
                )
            } else {
                None
            };
            Side {
                ids,
                features: None,
                losses,
            }
        }
    };
    ensure_unique(&side.ids, "record")?;
    Ok(side)
}

/// The configured class when it matches the requested kind, otherwise that
/// kind's defaults.
fn resolve_class(kind: Option<ClassKind>, configured: &FunctionClassSpec) -> FunctionClassSpec {
    let Some(kind) = kind else {
        return configured.clone();
    };
    let same = matches!(
        (kind, configured),
        (ClassKind::Intercept, FunctionClassSpec::Intercept)
            | (ClassKind::Groups, FunctionClassSpec::Groups { .. })
            | (ClassKind::Embedding, FunctionClassSpec::Embedding { .. })
            | (ClassKind::RfLeaf, FunctionClassSpec::RfLeaf { .. })
    );
    if same {
        return configured.clone();
    }
    match kind {
        ClassKind::Intercept => FunctionClassSpec::Intercept,
        // Bounds are filled in from the calibration data.
        ClassKind::Groups => FunctionClassSpec::Groups {
            feature: 0,
            lower: f64::NAN,
            upper: f64::NAN,
            bins: DEFAULT_BINS,
        },
        ClassKind::Embedding => FunctionClassSpec::Embedding {
            pca_evr: None,
            append_intercept: false,
        },
        ClassKind::RfLeaf => FunctionClassSpec::RfLeaf {
            params: Default::default(),
        },
    }
}

const DEFAULT_BINS: usize = 10;

fn featurize(
    args: &CalibrateArgs,
    task: TaskKind,
    class: &FunctionClassSpec,
    calib: &Side,
    test: &Side,
) -> CliResult<(serde_json::Value, Matrix, Matrix)> {
    match class {
        FunctionClassSpec::Intercept => {
            let ones = |n: usize| Matrix::from_vec(n, 1, vec![1.0; n]);
            Ok((
                json!({"kind": "intercept"}),
                ones(calib.ids.len())?,
                ones(test.ids.len())?,
            ))
        }
        FunctionClassSpec::Groups {
            feature,
            lower,
            upper,
            bins,
        } => {
            let (Some(cx), Some(tx)) = (&calib.features, &test.features) else {
                return Err(CliError::Config(format!(
                    "the groups class needs raw record features, which {} data does not have",
                    task_name(task)
                )));
            };
            if *feature >= cx.ncols() {
                return Err(CliError::Config(format!(
                    "group feature {feature} out of range: records have {} feature columns",
                    cx.ncols()
                )));
            }
            let (lo, hi) = if lower.is_nan() || upper.is_nan() {
                let column: Vec<f64> = cx.rows().map(|r| r[*feature]).collect();
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, if hi > lo { hi } else { lo + 1.0 })
            } else {
                (*lower, *upper)
            };
            if *bins == 0 || !(hi > lo) {
                return Err(CliError::Config("groups need bins >= 1 and upper > lower".into()));
            }
            let map = FeatureMap::group_indicators(cx.ncols(), equal_width_bins(*feature, lo, hi, *bins))?;
            let describe = json!({"kind": "groups", "feature": feature, "lower": lo, "upper": hi, "bins": bins});
            Ok((describe, map.featurize_rows(cx)?, map.featurize_rows(tx)?))
        }
        FunctionClassSpec::Embedding {
            pca_evr,
            append_intercept,
        } => {
            if pca_evr.is_some() {
                return Err(CliError::Config(
                    "PCA embeddings are only available in experiment mode; reduce the embedding files beforehand"
                        .into(),
                ));
            }
            let (cx, tx) = embeddings(args, calib, test, "embedding")?;
            let map = FeatureMap::LinearEmbedding {
                dim: cx.ncols(),
                pca: None,
                append_intercept: *append_intercept,
            };
            if tx.ncols() != cx.ncols() {
                return Err(CliError::Data(format!(
                    "embedding widths differ: calibration {}, test {}",
                    cx.ncols(),
                    tx.ncols()
                )));
            }
            let describe = json!({"kind": "embedding", "dim": cx.ncols(), "append_intercept": append_intercept});
            Ok((describe, map.featurize_rows(&cx)?, map.featurize_rows(&tx)?))
        }
        FunctionClassSpec::RfLeaf { .. } => {
            let (cx, tx) = embeddings(args, calib, test, "rf-leaf")?;
            if tx.ncols() != cx.ncols() {
                return Err(CliError::Data(format!(
                    "leaf embeddings differ in width: calibration {}, test {}",
                    cx.ncols(),
                    tx.ncols()
                )));
            }
            let describe = json!({"kind": "rf-leaf", "leaves": cx.ncols()});
            Ok((describe, cx, tx))
        }
    }
}

fn embeddings(args: &CalibrateArgs, calib: &Side, test: &Side, class: &str) -> CliResult<(Matrix, Matrix)> {
    let (Some(cp), Some(tp)) = (&args.calibration_embedding, &args.test_embedding) else {
        return Err(CliError::Config(format!(
            "the {class} class needs --calibration-embedding and --test-embedding"
        )));
    };
    let ce = align_embedding(&read_embedding_file(cp)?, &calib.ids, cp)?;
    let te = align_embedding(&read_embedding_file(tp)?, &test.ids, tp)?;
    Ok((ce, te))
}

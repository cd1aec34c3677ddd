//! Repeated-split experiments comparing AA-CRC against marginal CRC.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::generate::{synth_regression_generate, synth_segmentation_with, SegmentationData, SegmentationParams};
use super::stats::{group_risks, mean_std, spearman, tilted_risk, GroupRisk};
use crate::engine::{
    marginal_crc_threshold, BatchOptions, CalibrationSet, Calibrator, FitOutcome, Regularizer, SolverConfig,
};
use crate::error::{Error, Result};
use crate::features::{equal_width_bins, rf_fit, FeatureMap, PcaModel, RfParams};
use crate::loss::{AlphaLevel, StepLoss};
use crate::matrix::{dot, norm, Matrix};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tasks::{apply_mask_threshold, interval_loss, mask_metrics, recall_loss, Orientation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Segmentation,
}

impl TaskKind {
    pub fn orientation(self) -> Orientation {
        match self {
            Self::Regression => Orientation::GrowingSets,
            Self::Segmentation => Orientation::ShrinkingSets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionClassSpec {
    Intercept,
    /// Equal-width bins on one record feature.
    Groups {
        feature: usize,
        lower: f64,
        upper: f64,
        bins: usize,
    },
    /// The record itself (optionally PCA-reduced on the residual split).
    Embedding {
        #[serde(default)]
        pca_evr: Option<f64>,
        #[serde(default)]
        append_intercept: bool,
    },
    /// Leaf indicators of a forest trained on the residual split.
    RfLeaf {
        #[serde(default)]
        params: RfParams,
    },
}

/// Split sizes and repetition count.
///
/// For segmentation the pool of `residual + calibration + test` images is
/// generated once; the first `residual` images are held out and the rest are
/// reshuffled into calibration and test in every repetition. The training
/// split is unused because both tasks come with their predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub train: usize,
    pub residual: usize,
    pub calibration: usize,
    pub test: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.calibration == 0 || self.test == 0 {
            return Err(Error::InvalidConfig("calibration and test sizes must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub function_class: FunctionClassSpec,
    pub alpha: AlphaLevel,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub batch: BatchOptions,
    pub split: SplitPlan,
    #[serde(default)]
    pub segmentation: SegmentationParams,
    /// Number of random nonnegative tilt directions.
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Check directional residuals of every converged fit.
    #[serde(default = "default_true")]
    pub certify: bool,
    /// Fixed score cutoff used as the base model's reference recall.
    #[serde(default = "default_reference_threshold")]
    pub reference_threshold: f64,
}

fn default_directions() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_reference_threshold() -> f64 {
    0.5
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::regression_default()
    }
}

impl ExperimentConfig {
    /// RF-leaf groups on the heteroscedastic regression task.
    pub fn regression_default() -> Self {
        Self {
            task: TaskKind::Regression,
            function_class: FunctionClassSpec::RfLeaf {
                params: RfParams::default(),
            },
            alpha: AlphaLevel::new(0.1).expect("valid alpha"),
            regularizer: Regularizer::None,
            solver: SolverConfig::default(),
            batch: BatchOptions::default(),
            split: SplitPlan {
                train: 2000,
                residual: 1000,
                calibration: 9000,
                test: 5000,
                repetitions: 10,
                seed: 20_240_101,
            },
            segmentation: SegmentationParams::default(),
            directions: default_directions(),
            certify: true,
            reference_threshold: default_reference_threshold(),
        }
    }

    /// Linear embedding class on the planted segmentation generator.
    pub fn segmentation_default() -> Self {
        Self {
            task: TaskKind::Segmentation,
            function_class: FunctionClassSpec::Embedding {
                pca_evr: None,
                append_intercept: false,
            },
            split: SplitPlan {
                train: 0,
                residual: 0,
                calibration: 250,
                test: 250,
                repetitions: 20,
                seed: 20_240_102,
            },
            ..Self::regression_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.solver.validate()?;
        self.regularizer.validate()?;
        if self.batch.chunk_size == 0 {
            return Err(Error::InvalidConfig("batch.chunk_size must be >= 1".into()));
        }
        if self.task == TaskKind::Segmentation {
            self.segmentation.validate()?;
        }
        let needs_residual = match &self.function_class {
            FunctionClassSpec::RfLeaf { .. } => true,
            FunctionClassSpec::Embedding { pca_evr, .. } => pca_evr.is_some(),
            FunctionClassSpec::Groups { bins, lower, upper, .. } => {
                if *bins == 0 || !(upper > lower) {
                    return Err(Error::InvalidConfig("groups need bins >= 1 and upper > lower".into()));
                }
                false
            }
            FunctionClassSpec::Intercept => false,
        };
        if needs_residual && self.split.residual == 0 {
            return Err(Error::InvalidConfig(
                "this function class is fit on the residual split, which must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    /// Distinct test feature rows solved.
    pub fits: usize,
    pub converged: usize,
    pub unbounded: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub directional_checks: usize,
    pub directional_violations: usize,
    /// Largest distance of zero from a directional residual interval.
    pub max_directional_residual: f64,
    pub max_stationarity_residual: f64,
}

impl CertificateSummary {
    fn absorb(&mut self, other: &Self) {
        self.fits += other.fits;
        self.converged += other.converged;
        self.unbounded += other.unbounded;
        self.not_converged += other.not_converged;
        self.failed += other.failed;
        self.directional_checks += other.directional_checks;
        self.directional_violations += other.directional_violations;
        self.max_directional_residual = self.max_directional_residual.max(other.max_directional_residual);
        self.max_stationarity_residual = self.max_stationarity_residual.max(other.max_stationarity_residual);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean finite AA-CRC threshold of images in the bin.
    pub mean_threshold: f64,
    pub crc_threshold_mean: f64,
    pub recall_mean: f64,
    pub precision_mean: f64,
    pub crc_precision_mean: f64,
    #[serde(skip)]
    finite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub marginal_risk: f64,
    pub crc_marginal_risk: f64,
    pub per_group_risk: Vec<GroupRisk>,
    pub tilted_risks: Vec<f64>,
    pub crc_tilted_risks: Vec<f64>,
    pub recall_mean: Option<f64>,
    pub crc_recall_mean: Option<f64>,
    pub precision_mean: Option<f64>,
    pub crc_precision_mean: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub spearman_p: Option<f64>,
    /// Mean finite native threshold over test points.
    pub mean_threshold: f64,
    pub infinite_thresholds: usize,
    pub crc_threshold: f64,
    pub certificate: CertificateSummary,
    #[serde(skip)]
    bins: Vec<RecallBin>,
    #[serde(skip)]
    group_sums: Vec<(usize, f64, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repetitions: usize,
    pub failed_repetitions: usize,
    pub marginal_risk: Option<MeanStd>,
    pub crc_marginal_risk: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub crc_recall: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub crc_precision: Option<MeanStd>,
    pub spearman_rho: Option<MeanStd>,
    /// Repetitions in which AA-CRC precision beats CRC precision.
    pub precision_wins: usize,
    /// Mean over repetitions per direction, with its Monte-Carlo standard error.
    pub tilted_risk_mean: Vec<f64>,
    pub tilted_risk_se: Vec<f64>,
    /// Group risks pooled over all repetitions (the feature map is shared).
    pub pooled_groups: Vec<GroupRisk>,
    pub recall_bins: Vec<RecallBin>,
    pub certificate: CertificateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub feature_dimension: usize,
    pub records: Vec<RepetitionRecord>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("report serialization: {e}")))
    }

    /// One row per repetition.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "repetition,seed,status,marginal_risk,crc_marginal_risk,recall_mean,crc_recall_mean,\
             precision_mean,crc_precision_mean,spearman_rho,spearman_p,mean_threshold,infinite_thresholds,\
             crc_threshold,fits,converged,unbounded,not_converged,failed,directional_checks,\
             directional_violations,max_directional_residual,max_tilted_risk\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            let c = &r.certificate;
            let max_tilted = r.tilted_risks.iter().copied().fold(f64::NAN, f64::max);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.repetition,
                r.seed,
                if r.error.is_some() { "failed" } else { "ok" },
                r.marginal_risk,
                r.crc_marginal_risk,
                opt(r.recall_mean),
                opt(r.crc_recall_mean),
                opt(r.precision_mean),
                opt(r.crc_precision_mean),
                opt(r.spearman_rho),
                opt(r.spearman_p),
                r.mean_threshold,
                r.infinite_thresholds,
                r.crc_threshold,
                c.fits,
                c.converged,
                c.unbounded,
                c.not_converged,
                c.failed,
                c.directional_checks,
                c.directional_violations,
                c.max_directional_residual,
                max_tilted,
            );
        }
        out
    }

    /// Threshold table by reference-recall bin.
    pub fn recall_bins_csv(&self) -> String {
        let mut out = String::from(
            "recall_lower,recall_upper,count,mean_threshold,crc_threshold,recall_mean,precision_mean,crc_precision_mean\n",
        );
        for b in &self.aggregate.recall_bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                b.lower,
                b.upper,
                b.count,
                b.mean_threshold,
                b.crc_threshold_mean,
                b.recall_mean,
                b.precision_mean,
                b.crc_precision_mean
            );
        }
        out
    }
}

/// Data shared by every repetition.
enum Pool {
    Regression,
    Segmentation { data: SegmentationData, offset: usize },
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let split = &config.split;
    let alpha = config.alpha;
    let (pool, residual_records, residual_targets, record_dim) = match config.task {
        TaskKind::Regression => {
            let (records, targets) = if split.residual > 0 {
                let res = synth_regression_generate(split.residual, derive_seed(split.seed, 0))?;
                (Matrix::column(&res.x), res.abs_residuals())
            } else {
                (Matrix::zeros(0, 1), Vec::new())
            };
            (Pool::Regression, records, targets, 1)
        }
        TaskKind::Segmentation => {
            let total = split.residual + split.calibration + split.test;
            let data = synth_segmentation_with(total, &config.segmentation, derive_seed(split.seed, 0))?;
            let idx: Vec<usize> = (0..split.residual).collect();
            let records = data.embedding.select_rows(&idx);
            let targets = data.samples[..split.residual]
                .iter()
                .map(|s| Ok(recall_loss(s)?.crossing_threshold(alpha).clamp(0.0, 1.0)))
                .collect::<Result<Vec<f64>>>()?;
            let dim = data.embedding.ncols();
            (
                Pool::Segmentation {
                    data,
                    offset: split.residual,
                },
                records,
                targets,
                dim,
            )
        }
    };
    let feature_map = build_feature_map(config, &residual_records, &residual_targets, record_dim)?;
    let d = feature_map.dimension();

    let records: Vec<RepetitionRecord> = (0..split.repetitions)
        .map(|rep| {
            let seed = derive_seed(split.seed, 100 + rep as u64);
            run_repetition(config, &pool, &feature_map, rep, seed).unwrap_or_else(|e| failed_record(rep, seed, e))
        })
        .collect();
    let aggregate = aggregate(&records, config.directions);
    Ok(EvalReport {
        config: config.clone(),
        feature_dimension: d,
        records,
        aggregate,
    })
}

fn build_feature_map(
    config: &ExperimentConfig,
    residual_records: &Matrix,
    residual_targets: &[f64],
    record_dim: usize,
) -> Result<FeatureMap> {
    Ok(match &config.function_class {
        FunctionClassSpec::Intercept => FeatureMap::Intercept,
        FunctionClassSpec::Groups {
            feature,
            lower,
            upper,
            bins,
        } => FeatureMap::group_indicators(record_dim, equal_width_bins(*feature, *lower, *upper, *bins))?,
        FunctionClassSpec::Embedding {
            pca_evr,
            append_intercept,
        } => FeatureMap::LinearEmbedding {
            dim: record_dim,
            pca: pca_evr.map(|evr| PcaModel::fit(residual_records, evr)).transpose()?,
            append_intercept: *append_intercept,
        },
        FunctionClassSpec::RfLeaf { params } => {
            let params = RfParams {
                seed: derive_seed(config.split.seed, 1 + params.seed),
                ..params.clone()
            };
            FeatureMap::RfLeaf {
                forest: rf_fit(residual_records, residual_targets, &params)?,
            }
        }
    })
}

fn failed_record(repetition: usize, seed: u64, e: Error) -> RepetitionRecord {
    RepetitionRecord {
        repetition,
        seed,
        error: Some(e.to_string()),
        marginal_risk: f64::NAN,
        crc_marginal_risk: f64::NAN,
        per_group_risk: Vec::new(),
        tilted_risks: Vec::new(),
        crc_tilted_risks: Vec::new(),
        recall_mean: None,
        crc_recall_mean: None,
        precision_mean: None,
        crc_precision_mean: None,
        spearman_rho: None,
        spearman_p: None,
        mean_threshold: f64::NAN,
        infinite_thresholds: 0,
        crc_threshold: f64::NAN,
        certificate: CertificateSummary::default(),
        bins: Vec::new(),
        group_sums: Vec::new(),
    }
}

struct RepData {
    cal_records: Matrix,
    cal_losses: Vec<StepLoss>,
    test_records: Matrix,
    test_losses: Vec<StepLoss>,
    /// Segmentation test images by pool index.
    test_images: Vec<usize>,
}

fn draw_repetition(config: &ExperimentConfig, pool: &Pool, seed: u64) -> Result<RepData> {
    let split = &config.split;
    match pool {
        Pool::Regression => {
            let cal = synth_regression_generate(split.calibration, derive_seed(seed, 0))?;
            let test = synth_regression_generate(split.test, derive_seed(seed, 1))?;
            let losses = |d: &super::generate::RegressionData| -> Result<Vec<StepLoss>> {
                d.f_hat.iter().zip(&d.y).map(|(&f, &y)| interval_loss(f, y)).collect()
            };
            Ok(RepData {
                cal_records: Matrix::column(&cal.x),
                cal_losses: losses(&cal)?,
                test_records: Matrix::column(&test.x),
                test_losses: losses(&test)?,
                test_images: Vec::new(),
            })
        }
        Pool::Segmentation { data, offset } => {
            let mut idx: Vec<usize> = (*offset..data.samples.len()).collect();
            idx.shuffle(&mut rng_from_seed(seed));
            let (cal, rest) = idx.split_at(split.calibration);
            let test = &rest[..split.test];
            let losses = |ids: &[usize]| -> Result<Vec<StepLoss>> {
                ids.iter().map(|&i| recall_loss(&data.samples[i])).collect()
            };
            Ok(RepData {
                cal_records: data.embedding.select_rows(cal),
                cal_losses: losses(cal)?,
                test_records: data.embedding.select_rows(test),
                test_losses: losses(test)?,
                test_images: test.to_vec(),
            })
        }
    }
}

fn run_repetition(
    config: &ExperimentConfig,
    pool: &Pool,
    map: &FeatureMap,
    repetition: usize,
    seed: u64,
) -> Result<RepetitionRecord> {
    let alpha = config.alpha;
    let orientation = config.task.orientation();
    let data = draw_repetition(config, pool, seed)?;
    let cal_features = map.featurize_rows(&data.cal_records)?;
    let test_features = map.featurize_rows(&data.test_records)?;
    let calib = CalibrationSet::new(cal_features, data.cal_losses.clone())?;
    let calibrator = Calibrator::new(&calib, alpha, config.regularizer, config.solver.clone())?;
    let fits = calibrator.fit_rows(&test_features, &config.batch);

    let directions = tilt_directions(config, &calib, &test_features);

    // Certificate bookkeeping over distinct feature rows.
    let mut cert = CertificateSummary::default();
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    for (row, fit) in test_features.rows().zip(&fits) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key, ()).is_some() {
            continue;
        }
        cert.fits += 1;
        let fit = match fit {
            Ok(f) => f,
            Err(_) => {
                cert.failed += 1;
                continue;
            }
        };
        match fit.outcome {
            FitOutcome::Unbounded => cert.unbounded += 1,
            _ if fit.converged => cert.converged += 1,
            _ => cert.not_converged += 1,
        }
        if fit.outcome != FitOutcome::Unbounded {
            cert.max_stationarity_residual = cert.max_stationarity_residual.max(fit.stationarity_residual);
        }
        if config.certify && fit.converged && !directions.is_empty() {
            for r in calibrator.directional_residuals(fit, row, &directions)? {
                cert.directional_checks += 1;
                let dist = r.distance();
                cert.max_directional_residual = cert.max_directional_residual.max(dist);
                if !r.certifies(fit.tolerance) {
                    cert.directional_violations += 1;
                }
            }
        }
    }

    // A failed item falls back to the most conservative threshold.
    let thresholds: Vec<f64> = fits
        .iter()
        .map(|f| f.as_ref().map_or(f64::NEG_INFINITY, |f| f.test_threshold))
        .collect();
    let crc_u = marginal_crc_threshold(&data.cal_losses, alpha)?;
    let risks: Vec<f64> = data
        .test_losses
        .iter()
        .zip(&thresholds)
        .map(|(l, &u)| l.eval(u))
        .collect();
    let crc_risks: Vec<f64> = data.test_losses.iter().map(|l| l.eval(crc_u)).collect();
    let m = risks.len() as f64;

    let finite: Vec<f64> = thresholds
        .iter()
        .filter(|u| u.is_finite())
        .map(|&u| orientation.to_native(u))
        .collect();
    let mean_threshold = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };

    let membership = group_membership(map, &test_features);
    let per_group_risk = match &membership {
        Some(g) => group_risks(g, &risks)?,
        None => Vec::new(),
    };
    let group_sums = per_group_risk
        .iter()
        .map(|g| (g.group, g.risk * g.count as f64, g.count))
        .collect();

    let mut tilted = Vec::with_capacity(directions.len());
    let mut crc_tilted = Vec::with_capacity(directions.len());
    for w in &directions {
        let weights: Vec<f64> = test_features.rows().map(|r| dot(r, w).max(0.0)).collect();
        if weights.iter().sum::<f64>() > 0.0 {
            tilted.push(tilted_risk(&weights, &risks)?);
            crc_tilted.push(tilted_risk(&weights, &crc_risks)?);
        } else {
            tilted.push(f64::NAN);
            crc_tilted.push(f64::NAN);
        }
    }

    let mut record = RepetitionRecord {
        repetition,
        seed,
        error: None,
        marginal_risk: risks.iter().sum::<f64>() / m,
        crc_marginal_risk: crc_risks.iter().sum::<f64>() / m,
        per_group_risk,
        tilted_risks: tilted,
        crc_tilted_risks: crc_tilted,
        recall_mean: None,
        crc_recall_mean: None,
        precision_mean: None,
        crc_precision_mean: None,
        spearman_rho: None,
        spearman_p: None,
        mean_threshold,
        infinite_thresholds: thresholds.len() - finite.len(),
        crc_threshold: orientation.to_native(crc_u),
        certificate: cert,
        bins: Vec::new(),
        group_sums,
    };

    if let Pool::Segmentation { data: seg, .. } = pool {
        segmentation_metrics(config, seg, &data.test_images, &thresholds, crc_u, &mut record)?;
    }
    Ok(record)
}

fn segmentation_metrics(
    config: &ExperimentConfig,
    seg: &SegmentationData,
    images: &[usize],
    thresholds: &[f64],
    crc_u: f64,
    record: &mut RepetitionRecord,
) -> Result<()> {
    let mut recall = Vec::with_capacity(images.len());
    let mut precision = Vec::with_capacity(images.len());
    let mut crc_recall = Vec::with_capacity(images.len());
    let mut crc_precision = Vec::with_capacity(images.len());
    let mut reference = Vec::with_capacity(images.len());
    for (&i, &u) in images.iter().zip(thresholds) {
        let s = &seg.samples[i];
        let aa = mask_metrics(&apply_mask_threshold(s.scores(), u), s.mask())?;
        let crc = mask_metrics(&apply_mask_threshold(s.scores(), crc_u), s.mask())?;
        let base = mask_metrics(&apply_mask_threshold(s.scores(), config.reference_threshold), s.mask())?;
        recall.push(aa.recall);
        precision.push(aa.precision);
        crc_recall.push(crc.recall);
        crc_precision.push(crc.precision);
        reference.push(base.recall);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    record.recall_mean = Some(mean(&recall));
    record.precision_mean = Some(mean(&precision));
    record.crc_recall_mean = Some(mean(&crc_recall));
    record.crc_precision_mean = Some(mean(&crc_precision));
    if let Ok(s) = spearman(thresholds, &reference) {
        record.spearman_rho = Some(s.rho);
        record.spearman_p = Some(s.p_value);
    }

    let mut bins: Vec<RecallBin> = (0..10)
        .map(|k| RecallBin {
            lower: k as f64 / 10.0,
            upper: (k + 1) as f64 / 10.0,
            ..RecallBin::default()
        })
        .collect();
    // Bins hold sums here; the aggregate turns them into means.
    for (j, &r) in reference.iter().enumerate() {
        let k = ((r * 10.0).floor() as usize).min(9);
        let b = &mut bins[k];
        b.count += 1;
        if thresholds[j].is_finite() {
            b.mean_threshold += thresholds[j];
            b.finite += 1;
        }
        b.crc_threshold_mean += crc_u;
        b.recall_mean += recall[j];
        b.precision_mean += precision[j];
        b.crc_precision_mean += crc_precision[j];
    }
    record.bins = bins;
    Ok(())
}

/// Columns of group-type feature maps as membership indicators.
fn group_membership(map: &FeatureMap, features: &Matrix) -> Option<Vec<Vec<bool>>> {
    match map {
        FeatureMap::Intercept | FeatureMap::GroupIndicators { .. } | FeatureMap::RfLeaf { .. } => {
            Some(features.rows().map(|r| r.iter().map(|&v| v > 0.0).collect()).collect())
        }
        FeatureMap::LinearEmbedding { .. } => None,
    }
}

/// Unit-norm directions `w` whose tilt `Φ(x)ᵀw` is nonnegative on every
/// calibration and test point of this repetition.
///
/// Nonnegative features take nonnegative `w` with skewed coordinates. Other
/// features need a column that is constant and positive, whose coefficient
/// is raised until the tilt is nonnegative everywhere. The random draw uses
/// a stream shared by all repetitions.
fn tilt_directions(config: &ExperimentConfig, calib: &CalibrationSet, test: &Matrix) -> Vec<Vec<f64>> {
    let d = calib.dim();
    let mut rng = rng_from_seed(derive_seed(config.split.seed, 2));
    let all_rows = || calib.features().rows().chain(test.rows());
    let nonnegative = all_rows().all(|r| r.iter().all(|&v| v >= 0.0));
    let mut out = Vec::with_capacity(config.directions);
    if nonnegative {
        for _ in 0..config.directions {
            let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>().powi(3)).collect();
            let n = norm(&w);
            if n > 0.0 {
                out.push(w.iter().map(|v| v / n).collect());
            }
        }
        return out;
    }
    let first = calib.features().row(0);
    let Some(c) = (0..d).find(|&j| first[j] > 0.0 && all_rows().all(|r| r[j] == first[j])) else {
        return out;
    };
    for _ in 0..config.directions {
        let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        w[c] = 0.0;
        let values: Vec<f64> = all_rows().map(|r| dot(r, &w)).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Leave a margin so the smallest weight is a tenth of the range.
        w[c] = (-lo + 0.1 * (hi - lo).max(1e-12)) / first[c];
        let n = norm(&w);
        out.push(w.iter().map(|v| v / n).collect());
    }
    out
}

fn aggregate(records: &[RepetitionRecord], n_directions: usize) -> Aggregate {
    let ok: Vec<&RepetitionRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let collect =
        |f: &dyn Fn(&RepetitionRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };

    let mut tilted_mean = Vec::with_capacity(n_directions);
    let mut tilted_se = Vec::with_capacity(n_directions);
    let width = ok.iter().map(|r| r.tilted_risks.len()).max().unwrap_or(0);
    for k in 0..width {
        let v: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.tilted_risks.get(k).copied())
            .filter(|x| !x.is_nan())
            .collect();
        let (m, s) = mean_std(&v);
        tilted_mean.push(m);
        tilted_se.push(s / (v.len() as f64).sqrt());
    }

    let mut pooled: HashMap<usize, (f64, usize)> = HashMap::new();
    for r in &ok {
        for &(g, sum, count) in &r.group_sums {
            let e = pooled.entry(g).or_default();
            e.0 += sum;
            e.1 += count;
        }
    }
    let mut pooled_groups: Vec<GroupRisk> = pooled
        .into_iter()
        .map(|(group, (sum, count))| GroupRisk {
            group,
            risk: sum / count as f64,
            count,
        })
        .collect();
    pooled_groups.sort_by_key(|g| g.group);

    let mut recall_bins: Vec<RecallBin> = Vec::new();
    for r in &ok {
        if recall_bins.is_empty() && !r.bins.is_empty() {
            recall_bins = r
                .bins
                .iter()
                .map(|b| RecallBin {
                    lower: b.lower,
                    upper: b.upper,
                    ..RecallBin::default()
                })
                .collect();
        }
        for (k, b) in r.bins.iter().enumerate() {
            let a = &mut recall_bins[k];
            a.count += b.count;
            a.mean_threshold += b.mean_threshold;
            a.crc_threshold_mean += b.crc_threshold_mean;
            a.recall_mean += b.recall_mean;
            a.precision_mean += b.precision_mean;
            a.crc_precision_mean += b.crc_precision_mean;
            a.finite += b.finite;
        }
    }
    for b in &mut recall_bins {
        b.mean_threshold = if b.finite > 0 {
            b.mean_threshold / b.finite as f64
        } else {
            f64::NAN
        };
        if b.count > 0 {
            let c = b.count as f64;
            b.crc_threshold_mean /= c;
            b.recall_mean /= c;
            b.precision_mean /= c;
            b.crc_precision_mean /= c;
        }
    }

    let mut certificate = CertificateSummary::default();
    for r in &ok {
        certificate.absorb(&r.certificate);
    }

    Aggregate {
        repetitions: records.len(),
        failed_repetitions: records.len() - ok.len(),
        marginal_risk: MeanStd::of(&collect(&|r| Some(r.marginal_risk))),
        crc_marginal_risk: MeanStd::of(&collect(&|r| Some(r.crc_marginal_risk))),
        recall: MeanStd::of(&collect(&|r| r.recall_mean)),
        crc_recall: MeanStd::of(&collect(&|r| r.crc_recall_mean)),
        precision: MeanStd::of(&collect(&|r| r.precision_mean)),
        crc_precision: MeanStd::of(&collect(&|r| r.crc_precision_mean)),
        spearman_rho: MeanStd::of(&collect(&|r| r.spearman_rho)),
        precision_wins: ok
            .iter()
            .filter(|r| matches!((r.precision_mean, r.crc_precision_mean), (Some(a), Some(b)) if a > b))
            .count(),
        tilted_risk_mean: tilted_mean,
        tilted_risk_se: tilted_se,
        pooled_groups,
        recall_bins,
        certificate,
    }
}

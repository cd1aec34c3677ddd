//! `aacrc evaluate`: score threshold files against ground truth, or run the
//! configured repeated-split experiment.

use std::io::Write as _;
use std::path::Path;

use aacrc_core::sim::{run_experiment, spearman, TaskKind};
use aacrc_core::tasks::{apply_mask_threshold, covers, mask_metrics, prediction_interval};
use serde::Serialize;

use crate::config::{task_name, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{
    create, ensure_unique, read_records, read_segmentation_file, read_thresholds, Thresholds, FORMAT_VERSION,
};
use crate::EvaluateArgs;

const RECALL_BINS: usize = 10;

#[derive(Debug, Serialize)]
struct Report {
    format: &'static str,
    version: u32,
    seed: u64,
    task: &'static str,
    records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    regression: Option<RegressionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<SegmentationSummary>,
}

#[derive(Debug, Serialize)]
struct RegressionSummary {
    miscoverage: f64,
    /// Mean over finite half-widths.
    mean_half_width: Option<f64>,
    infinite_thresholds: usize,
    crc_miscoverage: Option<f64>,
    crc_half_width: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SegmentationSummary {
    reference_threshold: f64,
    recall_mean: f64,
    precision_mean: f64,
    reference_recall_mean: f64,
    crc_recall_mean: Option<f64>,
    crc_precision_mean: Option<f64>,
    /// Rank correlation between the cutoff and the reference recall.
    spearman_rho: Option<f64>,
    spearman_p: Option<f64>,
    recall_bins: Vec<Bin>,
}

#[derive(Debug, Default, Serialize)]
struct Bin {
    recall_lower: f64,
    recall_upper: f64,
    count: usize,
    mean_threshold: Option<f64>,
    recall_mean: Option<f64>,
    precision_mean: Option<f64>,
    crc_precision_mean: Option<f64>,
}

pub fn run(args: &EvaluateArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(seed) = args.seed {
        config.experiment.split.seed = seed;
    }
    if let Some(t) = args.reference_threshold {
        config.experiment.reference_threshold = t;
    }
    if args.experiment {
        return experiment(args, config);
    }
    let test = args.test.as_ref().expect("clap requires --test");
    let thresholds_path = args.thresholds.as_ref().expect("clap requires --thresholds");
    let thresholds = read_thresholds(thresholds_path)?;
    let baseline = match &args.baseline {
        Some(p) => Some((read_thresholds(p)?, p.as_path())),
        None => None,
    };
    let report = match config.experiment.task {
        TaskKind::Regression => regression(args, &config, test, (&thresholds, thresholds_path), baseline)?,
        TaskKind::Segmentation => segmentation(args, &config, test, (&thresholds, thresholds_path), baseline)?,
    };
    let out = args
        .out_json
        .clone()
        .unwrap_or_else(|| config.paths.output_dir.join("evaluation.json"));
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    let mut w = create(&out)?;
    writeln!(w, "{text}")?;
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn aligned((table, path): (&Thresholds, &Path), ids: &[u64], expect_baseline: bool) -> CliResult<Vec<f64>> {
    if table.baseline != expect_baseline {
        let want = if expect_baseline { "crc_threshold" } else { "threshold" };
        return Err(CliError::Data(format!(
            "{}: expected a `{want}` column",
            path.display()
        )));
    }
    table.aligned(ids, path)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn regression(
    args: &EvaluateArgs,
    config: &RunConfig,
    test: &Path,
    thresholds: (&Thresholds, &Path),
    baseline: Option<(Thresholds, &Path)>,
) -> CliResult<Report> {
    let records = read_records(test)?;
    ensure_unique(&records.ids, "record")?;
    if records.len() == 0 {
        return Err(CliError::Data(format!("{}: empty test set", test.display())));
    }
    let (Some(y), Some(f_hat)) = (&records.y, &records.f_hat) else {
        return Err(CliError::Data(format!(
            "{}: need `y` and `f_hat` columns",
            test.display()
        )));
    };
    let widths = aligned(thresholds, &records.ids, false)?;
    let crc = baseline
        .as_ref()
        .map(|(t, p)| aligned((t, p), &records.ids, true))
        .transpose()?;
    let miss = |w: f64, i: usize| !covers(prediction_interval(f_hat[i], w), y[i]);

    let mut rows = Vec::with_capacity(records.len());
    let mut missed = Vec::with_capacity(records.len());
    let mut crc_missed = Vec::new();
    for (i, &id) in records.ids.iter().enumerate() {
        let m = miss(widths[i], i);
        missed.push(f64::from(u8::from(m)));
        let mut row = vec![id.to_string(), widths[i].to_string(), u8::from(m).to_string()];
        if let Some(c) = &crc {
            let cm = miss(c[i], i);
            crc_missed.push(f64::from(u8::from(cm)));
            row.extend([c[i].to_string(), u8::from(cm).to_string()]);
        }
        rows.push(row);
    }
    if let Some(path) = &args.out_csv {
        let mut header = vec!["id", "threshold", "miscovered"];
        if crc.is_some() {
            header.extend(["crc_threshold", "crc_miscovered"]);
        }
        write_rows(path, &header, &rows)?;
    }
    let finite: Vec<f64> = widths.iter().copied().filter(|w| w.is_finite()).collect();
    let summary = RegressionSummary {
        miscoverage: mean(&missed),
        mean_half_width: (!finite.is_empty()).then(|| mean(&finite)),
        infinite_thresholds: widths.len() - finite.len(),
        crc_miscoverage: crc.as_ref().map(|_| mean(&crc_missed)),
        crc_half_width: crc.as_ref().map(|c| mean(c)),
    };
    println!(
        "{} records: miscoverage {:.4}{}",
        records.len(),
        summary.miscoverage,
        summary
            .crc_miscoverage
            .map_or(String::new(), |m| format!(" (CRC {m:.4})"))
    );
    Ok(Report {
        format: "aacrc-evaluation",
        version: FORMAT_VERSION,
        seed: config.seed(),
        task: task_name(TaskKind::Regression),
        records: records.len(),
        regression: Some(summary),
        segmentation: None,
    })
}

fn segmentation(
    args: &EvaluateArgs,
    config: &RunConfig,
    test: &Path,
    thresholds: (&Thresholds, &Path),
    baseline: Option<(Thresholds, &Path)>,
) -> CliResult<Report> {
    let (ids, samples) = read_segmentation_file(test)?;
    ensure_unique(&ids, "image")?;
    if ids.is_empty() {
        return Err(CliError::Data(format!("{}: empty test set", test.display())));
    }
    let cutoffs = aligned(thresholds, &ids, false)?;
    let crc = baseline
        .as_ref()
        .map(|(t, p)| aligned((t, p), &ids, true))
        .transpose()?;
    let reference_threshold = config.experiment.reference_threshold;
    let metrics = |s: &aacrc_core::SegmentationSample, t: f64, id: u64| {
        mask_metrics(&apply_mask_threshold(s.scores(), t), s.mask())
            .map_err(|e| CliError::Data(format!("{}: image {id}: {e}", test.display())))
    };

    let (mut recall, mut precision, mut reference) = (Vec::new(), Vec::new(), Vec::new());
    let (mut crc_recall, mut crc_precision) = (Vec::new(), Vec::new());
    let mut rows = Vec::with_capacity(ids.len());
    for (i, (s, &id)) in samples.iter().zip(&ids).enumerate() {
        let aa = metrics(s, cutoffs[i], id)?;
        let base = metrics(s, reference_threshold, id)?;
        recall.push(aa.recall);
        precision.push(aa.precision);
        reference.push(base.recall);
        let mut row = vec![
            id.to_string(),
            cutoffs[i].to_string(),
            aa.recall.to_string(),
            aa.precision.to_string(),
            base.recall.to_string(),
        ];
        if let Some(c) = &crc {
            let m = metrics(s, c[i], id)?;
            crc_recall.push(m.recall);
            crc_precision.push(m.precision);
            row.extend([c[i].to_string(), m.recall.to_string(), m.precision.to_string()]);
        }
        rows.push(row);
    }
    if let Some(path) = &args.out_csv {
        let mut header = vec!["id", "threshold", "recall", "precision", "reference_recall"];
        if crc.is_some() {
            header.extend(["crc_threshold", "crc_recall", "crc_precision"]);
        }
        write_rows(path, &header, &rows)?;
    }

    let rank = spearman(&cutoffs, &reference).ok();
    let bins = recall_bins(
        &reference,
        &cutoffs,
        &recall,
        &precision,
        crc.as_ref().map(|_| crc_precision.as_slice()),
    );
    if let Some(path) = &args.bins_csv {
        let header = [
            "recall_lower",
            "recall_upper",
            "count",
            "mean_threshold",
            "recall_mean",
            "precision_mean",
            "crc_precision_mean",
        ];
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let rows: Vec<Vec<String>> = bins
            .iter()
            .map(|b| {
                vec![
                    b.recall_lower.to_string(),
                    b.recall_upper.to_string(),
                    b.count.to_string(),
                    opt(b.mean_threshold),
                    opt(b.recall_mean),
                    opt(b.precision_mean),
                    opt(b.crc_precision_mean),
                ]
            })
            .collect();
        write_rows(path, &header, &rows)?;
    }
    let summary = SegmentationSummary {
        reference_threshold,
        recall_mean: mean(&recall),
        precision_mean: mean(&precision),
        reference_recall_mean: mean(&reference),
        crc_recall_mean: crc.as_ref().map(|_| mean(&crc_recall)),
        crc_precision_mean: crc.as_ref().map(|_| mean(&crc_precision)),
        spearman_rho: rank.map(|s| s.rho),
        spearman_p: rank.map(|s| s.p_value),
        recall_bins: bins,
    };
    println!(
        "{} images: recall {:.4}, precision {:.4}{}",
        ids.len(),
        summary.recall_mean,
        summary.precision_mean,
        summary
            .crc_precision_mean
            .map_or(String::new(), |p| format!(" (CRC precision {p:.4})"))
    );
    Ok(Report {
        format: "aacrc-evaluation",
        version: FORMAT_VERSION,
        seed: config.seed(),
        task: task_name(TaskKind::Segmentation),
        records: ids.len(),
        regression: None,
        segmentation: Some(summary),
    })
}

/// Images grouped by reference recall into equal-width bins on `[0, 1]`.
fn recall_bins(
    reference: &[f64],
    cutoffs: &[f64],
    recall: &[f64],
    precision: &[f64],
    crc_precision: Option<&[f64]>,
) -> Vec<Bin> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); RECALL_BINS];
    for (i, &r) in reference.iter().enumerate() {
        members[((r * RECALL_BINS as f64).floor() as usize).min(RECALL_BINS - 1)].push(i);
    }
    let avg = |idx: &[usize], v: &[f64]| -> Option<f64> {
        let vals: Vec<f64> = idx.iter().map(|&i| v[i]).filter(|x| x.is_finite()).collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    members
        .iter()
        .enumerate()
        .map(|(k, idx)| Bin {
            recall_lower: k as f64 / RECALL_BINS as f64,
            recall_upper: (k + 1) as f64 / RECALL_BINS as f64,
            count: idx.len(),
            mean_threshold: avg(idx, cutoffs),
            recall_mean: avg(idx, recall),
            precision_mean: avg(idx, precision),
            crc_precision_mean: crc_precision.and_then(|c| avg(idx, c)),
        })
        .collect()
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(args: &EvaluateArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(r) = args.repetitions {
        config.experiment.split.repetitions = r;
    }
    config.validate()?;
    let report = run_experiment(&config.experiment)?;
    let out_dir = &config.paths.output_dir;
    let json_path = args.out_json.clone().unwrap_or_else(|| out_dir.join("experiment.json"));
    let csv_path = args.out_csv.clone().unwrap_or_else(|| out_dir.join("experiment.csv"));
    write_text(&json_path, &report.to_json()?)?;
    write_text(&csv_path, &report.to_csv())?;
    if let Some(path) = &args.bins_csv {
        write_text(path, &report.recall_bins_csv())?;
    }
    let agg = &report.aggregate;
    let fmt =
        |m: Option<aacrc_core::sim::MeanStd>| m.map_or("n/a".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.std));
    println!(
        "{} repetitions ({} failed), seed {}: risk {} vs CRC {}",
        agg.repetitions,
        agg.failed_repetitions,
        config.seed(),
        fmt(agg.marginal_risk),
        fmt(agg.crc_marginal_risk)
    );
    if agg.recall.is_some() {
        println!(
            "recall {}, precision {} vs CRC {}",
            fmt(agg.recall),
            fmt(agg.precision),
            fmt(agg.crc_precision)
        );
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

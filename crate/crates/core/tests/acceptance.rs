//! Acceptance suite.
//!
//! Runs every acceptance criterion at its pinned tolerance and runtime
//! budget, printing one `PASS`/`FAIL` line per criterion. The process exits
//! with a failure status if any criterion fails.

use std::time::{Duration, Instant};

use aacrc_core::features::rf_fit;
use aacrc_core::rng::rng_from_seed;
use aacrc_core::sim::{run_experiment, synth_regression_generate, FunctionClassSpec};
use aacrc_core::{
    fit_threshold_function, AlphaLevel, CalibrationSet, EvalReport, ExperimentConfig, Matrix, Orientation, Regularizer,
    RfParams, SolverConfig, SplitPlan, StepLoss,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn report(id: &str, name: &str, out: &Outcome, elapsed: Duration, budget: Option<Duration>) -> bool {
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let ok = out.passed && in_time;
    let budget_note = budget.map_or(String::new(), |b| format!(" / budget {:.0}s", b.as_secs_f64()));
    println!(
        "{} criterion {id} ({name}): {} [{:.2}s{budget_note}]",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
    );
    ok
}

// ---------- criteria 1, 2 and 4: the regression pipeline ----------

fn regression_report() -> EvalReport {
    let config = ExperimentConfig::regression_default();
    assert_eq!(config.split.calibration, 9000);
    assert_eq!(config.split.test, 5000);
    assert_eq!(config.split.repetitions, 10);
    assert_eq!(config.alpha.value(), 0.1);
    assert_eq!(config.directions, 20);
    assert!(matches!(config.function_class, FunctionClassSpec::RfLeaf { .. }));
    run_experiment(&config).expect("regression experiment runs")
}

fn marginal_risk(report: &EvalReport) -> Outcome {
    let failed = report.aggregate.failed_repetitions;
    // Recompute the mean from the records rather than trusting the aggregate.
    let risks: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.marginal_risk)
        .collect();
    let mean = risks.iter().sum::<f64>() / risks.len().max(1) as f64;
    outcome(
        failed == 0 && risks.len() == 10 && (0.08..=0.12).contains(&mean),
        format!(
            "mean miscoverage {mean:.4} over {} repetitions, {failed} failed",
            risks.len()
        ),
    )
}

fn group_band(report: &EvalReport) -> Outcome {
    let large: Vec<_> = report
        .aggregate
        .pooled_groups
        .iter()
        .filter(|g| g.count >= 300)
        .collect();
    let worst = large.iter().map(|g| (g.risk - 0.1).abs()).fold(0.0, f64::max);
    let min_cov = large.iter().map(|g| 1.0 - g.risk).fold(f64::INFINITY, f64::min);
    let max_cov = large.iter().map(|g| 1.0 - g.risk).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        !large.is_empty() && worst <= 0.03,
        format!(
            "{} groups with >= 300 test members, coverage in [{min_cov:.4}, {max_cov:.4}], max deviation {worst:.4}",
            large.len()
        ),
    )
}

fn certificate(report: &EvalReport) -> Outcome {
    let c = &report.aggregate.certificate;
    let expected_checks = c.converged * report.config.directions;
    outcome(
        c.converged > 0 && c.directional_violations == 0 && c.directional_checks == expected_checks,
        format!(
            "{} fits, {} converged, {} unbounded, {} not converged, {} failed; {} directional checks, {} violations, max |residual| {:.2e}",
            c.fits,
            c.converged,
            c.unbounded,
            c.not_converged,
            c.failed,
            c.directional_checks,
            c.directional_violations,
            c.max_directional_residual
        ),
    )
}

// ---------- criterion 3: conformal quantile equivalence ----------

fn quantile_equivalence() -> Outcome {
    let mut rng = rng_from_seed(0xC0FFEE);
    let alphas = [0.05, 0.1, 0.2];
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for i in 0..100 {
        let a = alphas[i % 3];
        let n = rng.random_range(1..=200);
        let residuals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0f64).powi(2)).collect();
        let losses = residuals
            .iter()
            .map(|r| StepLoss::single_step(Orientation::GrowingSets.from_native(*r)).unwrap())
            .collect();
        let calib = CalibrationSet::new(Matrix::column(&vec![1.0; n]), losses).unwrap();
        let fit = fit_threshold_function(
            &calib,
            &[1.0],
            AlphaLevel::new(a).unwrap(),
            &Regularizer::None,
            &SolverConfig::default(),
        )
        .unwrap();
        let width = Orientation::GrowingSets.to_native(fit.test_threshold);

        let k = ((1.0 - a) * (n + 1) as f64).ceil() as usize;
        let mut sorted = residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let expected = if k > n { f64::INFINITY } else { sorted[k - 1] };
        if width == expected {
            continue;
        }
        let diff = (width - expected).abs();
        if diff.is_nan() || diff > 1e-9 {
            mismatches += 1;
        }
        worst = worst.max(diff);
    }
    outcome(
        mismatches == 0,
        format!("100 instances, {mismatches} mismatches, max |difference| {worst:.1e}"),
    )
}

// ---------- criterion 5: tilted risk ----------

fn tilted_risk() -> Outcome {
    let mut config = ExperimentConfig::regression_default();
    config.split = SplitPlan {
        calibration: 500,
        test: 500,
        repetitions: 100,
        ..config.split
    };
    let report = run_experiment(&config).expect("tilted-risk experiment runs");
    let alpha = config.alpha.value();
    let agg = &report.aggregate;
    let directions = agg.tilted_risk_mean.len();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut violations = 0;
    for (m, se) in agg.tilted_risk_mean.iter().zip(&agg.tilted_risk_se) {
        let margin = m - (alpha + 3.0 * se);
        worst_margin = worst_margin.max(margin);
        if !(margin <= 0.0) {
            violations += 1;
        }
    }
    let max_mean = agg.tilted_risk_mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        directions == 20 && violations == 0 && agg.failed_repetitions == 0,
        format!(
            "{directions} directions over {} repetitions, max tilted risk {max_mean:.4}, worst margin to alpha + 3 SE {worst_margin:.4}, {violations} violations",
            agg.repetitions
        ),
    )
}

// ---------- criterion 6: antiderivative ----------

fn random_step_loss(rng: &mut impl Rng) -> StepLoss {
    let k = rng.random_range(0..6);
    let mut breakpoints: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let mut values: Vec<f64> = (0..=breakpoints.len()).map(|_| rng.random::<f64>()).collect();
    values.sort_by(f64::total_cmp);
    StepLoss::new(breakpoints, values).unwrap()
}

/// Three-point Gauss-Legendre quadrature of `ℓ − α` on each piece between
/// consecutive breakpoints.
fn quadrature(loss: &StepLoss, alpha: f64, from: f64, to: f64) -> f64 {
    let (lo, hi, sign) = if from <= to { (from, to, 1.0) } else { (to, from, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(loss.breakpoints().iter().copied().filter(|b| *b > lo && *b < hi));
    cuts.push(hi);
    let nodes = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        total += nodes
            .iter()
            .map(|(x, wt)| wt * (loss.eval(mid + half * x) - alpha))
            .sum::<f64>()
            * half;
    }
    sign * total
}

fn antiderivative() -> Outcome {
    let mut rng = rng_from_seed(6);
    let mut worst_quad: f64 = 0.0;
    let mut bracket_failures = 0;
    for _ in 0..1000 {
        let loss = random_step_loss(&mut rng);
        let a = rng.random_range(0.01..0.99);
        let alpha = AlphaLevel::new(a).unwrap();
        for _ in 0..5 {
            let u = rng.random_range(-8.0..8.0);
            let quad = quadrature(&loss, a, loss.anchor(), u);
            worst_quad = worst_quad.max((loss.antiderivative(alpha, u) - quad).abs());

            // Convexity gives backward difference <= left derivative and
            // forward difference >= right derivative.
            let (lo, hi) = loss.antiderivative_subgradient(alpha, u);
            let h = 1e-6;
            let f = |t: f64| loss.antiderivative(alpha, t);
            let backward = (f(u) - f(u - h)) / h;
            let forward = (f(u + h) - f(u)) / h;
            let slack = 1e-7;
            if backward > lo + slack || forward < hi - slack || lo > hi {
                bracket_failures += 1;
            }
        }
        // At a breakpoint the subdifferential must contain both one-sided slopes.
        if let Some(&b) = loss.breakpoints().first() {
            let (lo, hi) = loss.antiderivative_subgradient(alpha, b);
            let h = 1e-6;
            let f = |t: f64| loss.antiderivative(alpha, t);
            let backward = (f(b) - f(b - h)) / h;
            let forward = (f(b + h) - f(b)) / h;
            if (backward - lo).abs() > 1e-6 || (forward - hi).abs() > 1e-6 {
                bracket_failures += 1;
            }
        }
    }
    outcome(
        worst_quad <= 1e-8 && bracket_failures == 0,
        format!("1000 losses, max |I - quadrature| {worst_quad:.1e}, {bracket_failures} bracket failures"),
    )
}

// ---------- criterion 7: segmentation adaptivity ----------

fn adaptivity() -> Outcome {
    let config = ExperimentConfig::segmentation_default();
    assert_eq!(config.split.calibration + config.split.test, 500);
    assert_eq!(config.split.repetitions, 20);
    let report = run_experiment(&config).expect("segmentation experiment runs");
    let ok: Vec<_> = report.records.iter().filter(|r| r.error.is_none()).collect();
    let reps = ok.len();

    let recalls: Vec<f64> = ok.iter().filter_map(|r| r.recall_mean).collect();
    let recall = recalls.iter().sum::<f64>() / recalls.len().max(1) as f64;
    let recall_ok = recalls.len() == reps && (0.87..=0.93).contains(&recall);

    let wins = ok
        .iter()
        .filter(|r| matches!((r.precision_mean, r.crc_precision_mean), (Some(a), Some(c)) if a > c))
        .count();
    let precision = mean(ok.iter().filter_map(|r| r.precision_mean));
    let crc_precision = mean(ok.iter().filter_map(|r| r.crc_precision_mean));
    let precision_ok = precision > crc_precision && wins as f64 >= 0.95 * reps as f64;

    let spearman: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.spearman_rho.zip(r.spearman_p)).collect();
    let significant = spearman.iter().filter(|(rho, p)| *rho > 0.0 && *p < 0.05).count();
    let rho = mean(spearman.iter().map(|s| s.0));
    let max_p = spearman.iter().map(|s| s.1).fold(0.0, f64::max);
    let spearman_ok = spearman.len() == reps && significant == reps;

    outcome(
        reps == 20 && recall_ok && precision_ok && spearman_ok,
        format!(
            "(a) mean recall {recall:.4}; (b) precision {precision:.4} vs CRC {crc_precision:.4}, AA-CRC wins {wins}/{reps}; \
             (c) mean Spearman rho {rho:.3}, positive with p < 0.05 in {significant}/{reps} repetitions (max p {max_p:.1e})"
        ),
    )
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

// ---------- criterion 8: RF embedding ----------

fn rf_embedding() -> Outcome {
    let data = synth_regression_generate(1000, 8).unwrap();
    let features = Matrix::column(&data.x);
    let params = RfParams::default();
    let forest = rf_fit(&features, &data.abs_residuals(), &params).unwrap();
    let mut rng = rng_from_seed(88);
    let mut bad = 0;
    let mut non_binary = 0;
    for _ in 0..10_000 {
        let x = [rng.random_range(-2.0..12.0)];
        let e = forest.leaf_embed(&x);
        if e.iter().any(|v| *v != 0.0 && *v != 1.0) {
            non_binary += 1;
        }
        let ones = e.iter().filter(|v| **v == 1.0).count();
        if ones != params.n_trees {
            bad += 1;
        }
    }
    outcome(
        bad == 0 && non_binary == 0,
        format!(
            "T = {}, {} leaves, 10000 inputs, {bad} wrong popcounts, {non_binary} non-binary rows",
            params.n_trees,
            forest.leaf_count()
        ),
    )
}

fn main() {
    let mut all = true;

    let start = Instant::now();
    let regression = regression_report();
    let elapsed = start.elapsed();
    all &= report(
        "1",
        "marginal risk control",
        &marginal_risk(&regression),
        elapsed,
        Some(Duration::from_secs(180)),
    );
    all &= report(
        "2",
        "group-conditional band",
        &group_band(&regression),
        elapsed,
        Some(Duration::from_secs(180)),
    );

    let start = Instant::now();
    let out = quantile_equivalence();
    all &= report(
        "3",
        "conformal quantile equivalence",
        &out,
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );

    all &= report(
        "4",
        "stationarity certificate",
        &certificate(&regression),
        Duration::ZERO,
        None,
    );

    let start = Instant::now();
    let out = tilted_risk();
    all &= report(
        "5",
        "tilted-risk guarantee",
        &out,
        start.elapsed(),
        Some(Duration::from_secs(300)),
    );

    let start = Instant::now();
    let out = antiderivative();
    all &= report(
        "6",
        "antiderivative correctness",
        &out,
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );

    let start = Instant::now();
    let out = adaptivity();
    all &= report(
        "7",
        "adaptivity direction",
        &out,
        start.elapsed(),
        Some(Duration::from_secs(600)),
    );

    let start = Instant::now();
    let out = rf_embedding();
    all &= report(
        "8",
        "RF embedding structure",
        &out,
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );

    if !all {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

//! End-to-end tests of the `aacrc` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// Runs `aacrc` in `dir` with a whitespace-separated argument line.
fn aacrc(dir: &Path, line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aacrc"))
        .current_dir(dir)
        .args(line.split_whitespace())
        .output()
        .expect("binary runs")
}

#[track_caller]
fn ok(dir: &Path, line: &str) -> String {
    let out = aacrc(dir, line);
    assert!(
        out.status.success(),
        "aacrc {line} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[track_caller]
fn exit_code(dir: &Path, line: &str) -> i32 {
    aacrc(dir, line).status.code().expect("exited normally")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

/// Header and rows of a CSV file, split on commas.
fn csv_rows(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = read(dir, name);
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(dir: &Path, name: &str, col: &str) -> Vec<f64> {
    let (header, rows) = csv_rows(dir, name);
    let j = header.iter().position(|h| h == col).unwrap();
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

fn regression_files(dir: &Path) {
    ok(dir, "simulate regression --n 600 --seed 11 --out res.csv");
    ok(dir, "simulate regression --n 1500 --seed 12 --out cal.csv");
    ok(dir, "simulate regression --n 300 --seed 13 --out test.csv");
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) {
    let text = ok(dir, "config dump-defaults --task regression");
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    edit(&mut value);
    fs::write(dir.join(name), serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

#[test]
fn regression_simulation_writes_header_plus_n_rows_and_is_seeded() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "simulate regression --n 100 --seed 7 --out a.csv");
    ok(d, "simulate regression --n 100 --seed 7 --out b.csv");
    ok(d, "simulate regression --n 100 --seed 8 --out c.csv");
    let a = read(d, "a.csv");
    assert_eq!(a.lines().count(), 101);
    assert_eq!(a.lines().next().unwrap(), "id,x,y,f_hat");
    assert_eq!(a, read(d, "b.csv"));
    assert_ne!(a, read(d, "c.csv"));
    assert_eq!(json(d, "a.csv.meta.json")["seed"], 7);
}

#[test]
fn regression_simulation_defaults_to_the_data_directory() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), "simulate regression --n 5");
    assert_eq!(read(dir.path(), "data/regression.csv").lines().count(), 6);
}

#[test]
fn segmentation_container_header_records_count_and_shape() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "simulate segmentation --count 4 --rows 16 --cols 16 --out s.seg");
    let bytes = fs::read(d.join("s.seg")).unwrap();
    assert_eq!(&bytes[..8], b"AACRCSEG");
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    assert_eq!(u32_at(8), 1, "version");
    assert_eq!(u32_at(12), 16, "rows");
    assert_eq!(u32_at(16), 16, "cols");
    assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 4);
    // Each image stores 256 f32 scores and 256 mask bytes.
    assert_eq!(bytes.len(), 28 + 4 * 256 * 5);

    ok(
        d,
        "simulate segmentation --count 4 --rows 16 --cols 16 --format csv --out s.csv",
    );
    let csv = read(d, "s.csv");
    assert_eq!(csv.lines().next().unwrap(), "id,rows,cols,scores,mask");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn rf_embedding_rows_have_one_leaf_per_tree_and_reload_identically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    ok(
        d,
        "rf-embed --residual res.csv --trees 20 --model m.json --embed test.csv a.emb",
    );
    let text = read(d, "a.emb");
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("d="));
    let mut count = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').skip(1).collect();
        assert!(fields.iter().all(|f| *f == "0" || *f == "1"), "binary entries");
        assert_eq!(fields.iter().filter(|f| **f == "1").count(), 20);
        count += 1;
    }
    assert_eq!(count, 300);

    ok(d, "rf-embed --load-model m.json --embed test.csv b.emb");
    assert_eq!(text, read(d, "b.emb"));
}

#[test]
fn depth_zero_forest_embeds_every_record_identically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    ok(d, "rf-embed --residual res.csv --max-depth 0 --embed test.csv z.emb");
    let text = read(d, "z.emb");
    let rows: Vec<&str> = text.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert!(rows.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn intercept_threshold_is_the_conformal_order_statistic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "simulate regression --n 100 --seed 21 --out cal.csv");
    ok(d, "simulate regression --n 20 --seed 22 --out test.csv");
    ok(
        d,
        "calibrate --calibration cal.csv --test test.csv --function-class intercept --alpha 0.1 --out t.csv",
    );
    let y = column(d, "cal.csv", "y");
    let f = column(d, "cal.csv", "f_hat");
    let mut residuals: Vec<f64> = y.iter().zip(&f).map(|(y, f)| (y - f).abs()).collect();
    residuals.sort_by(f64::total_cmp);
    // k = ceil((n + 1)(1 - alpha)) = ceil(90.9) = 91.
    let expected = residuals[90];
    let widths = column(d, "t.csv", "threshold");
    assert_eq!(widths.len(), 20);
    for w in widths {
        assert!((w - expected).abs() <= 1e-12, "{w} vs {expected}");
    }
    let (header, rows) = csv_rows(d, "t.csv.certificate.csv");
    assert_eq!(header[..3], ["id", "outcome", "converged"]);
    assert!(rows.iter().all(|r| r[2] == "true"));
}

#[test]
fn crc_baseline_writes_one_constant_column() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    ok(
        d,
        "calibrate --calibration cal.csv --test test.csv --baseline crc --out crc.csv",
    );
    let (header, rows) = csv_rows(d, "crc.csv");
    assert_eq!(header, ["id", "crc_threshold"]);
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().all(|r| r[1] == rows[0][1]));
}

#[test]
fn duplicate_ids_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "simulate regression --n 50 --out cal.csv");
    fs::write(d.join("dup.csv"), "id,x,y,f_hat\n1,0.5,1,1\n1,0.6,1,1\n").unwrap();
    let line = "calibrate --calibration cal.csv --test dup.csv --function-class intercept --out t.csv";
    assert_eq!(exit_code(d, line), 3);
}

#[test]
fn empty_test_sets_are_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, "simulate regression --n 50 --out cal.csv");
    fs::write(d.join("empty.csv"), "id,x,y,f_hat\n").unwrap();
    fs::write(d.join("t.csv"), "id,threshold\n").unwrap();
    let calibrate = "calibrate --calibration cal.csv --test empty.csv --function-class intercept --out o.csv";
    assert_eq!(exit_code(d, calibrate), 3);
    assert_eq!(
        exit_code(d, "evaluate --test empty.csv --thresholds t.csv --out-json e.json"),
        3
    );
}

#[test]
fn perfect_scores_give_full_recall() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("imgs.csv"),
        "id,rows,cols,scores,mask\n\
         3,2,2,1 0 0 1,1001\n\
         5,2,2,0 1 1 1,0111\n\
         8,2,2,1 1 0 0,1100\n",
    )
    .unwrap();
    fs::write(d.join("t.csv"), "id,threshold\n8,0.5\n3,0.5\n5,0.5\n").unwrap();
    ok(
        d,
        "evaluate --task segmentation --test imgs.csv --thresholds t.csv --out-json e.json --out-csv e.csv",
    );
    let report = json(d, "e.json");
    assert_eq!(report["segmentation"]["recall_mean"], 1.0);
    assert_eq!(report["segmentation"]["precision_mean"], 1.0);
    assert_eq!(column(d, "e.csv", "recall"), vec![1.0; 3]);
}

#[test]
fn evaluation_is_deterministic_and_pairs_with_the_baseline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    ok(
        d,
        "calibrate --calibration cal.csv --test test.csv --function-class groups --out g.csv",
    );
    ok(
        d,
        "calibrate --calibration cal.csv --test test.csv --baseline crc --out crc.csv",
    );
    let eval = |name: &str| {
        ok(
            d,
            &format!(
                "evaluate --test test.csv --thresholds g.csv --baseline crc.csv --out-json {name}.json --out-csv {name}.csv"
            ),
        );
        (read(d, &format!("{name}.json")), read(d, &format!("{name}.csv")))
    };
    let first = eval("e1");
    assert_eq!(first, eval("e2"));
    let (header, rows) = csv_rows(d, "e1.csv");
    assert_eq!(
        header,
        ["id", "threshold", "miscovered", "crc_threshold", "crc_miscovered"]
    );
    assert_eq!(rows.len(), 300);
}

#[test]
fn exit_codes_distinguish_config_data_and_certificate_failures() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    let calibrate = "calibrate --calibration cal.csv --test test.csv --out t.csv";

    fs::write(d.join("unknown.json"), r#"{"experiment_typo": {}}"#).unwrap();
    assert_eq!(exit_code(d, "--config unknown.json simulate regression --n 3"), 2);
    assert_eq!(exit_code(d, "simulate regression --n 0"), 2);
    assert_eq!(
        exit_code(d, &format!("{calibrate} --alpha 1.5 --function-class intercept")),
        2
    );
    assert_eq!(exit_code(d, &format!("{calibrate} --function-class rf-leaf")), 2);

    assert_eq!(
        exit_code(d, "calibrate --calibration missing.csv --test test.csv --out t.csv"),
        3
    );
    fs::write(d.join("bad.csv"), "id,x,weird\n1,2,3\n").unwrap();
    assert_eq!(
        exit_code(
            d,
            "calibrate --calibration bad.csv --test test.csv --function-class intercept --out t.csv"
        ),
        3
    );

    // One simplex pivot cannot solve a ten-group problem.
    write_config(d, "tight.json", |v| {
        v["experiment"]["solver"]["max_iterations"] = 1.into()
    });
    assert_eq!(
        exit_code(d, &format!("--config tight.json {calibrate} --function-class groups")),
        4
    );
    let (_, rows) = csv_rows(d, "t.csv.certificate.csv");
    assert!(rows.iter().any(|r| r[2] == "false"));
}

#[test]
fn dumped_defaults_validate_and_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for task in ["regression", "segmentation"] {
        let dumped = ok(d, &format!("config dump-defaults --task {task}"));
        fs::write(d.join("c.json"), &dumped).unwrap();
        assert_eq!(ok(d, "config validate c.json"), dumped);
    }
    fs::write(d.join("partial.json"), r#"{"threads": 2}"#).unwrap();
    let filled: serde_json::Value = serde_json::from_str(&ok(d, "config validate partial.json")).unwrap();
    assert_eq!(filled["threads"], 2);
    assert_eq!(filled["experiment"]["alpha"], 0.1);
}

#[test]
fn task_flag_must_agree_with_the_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_config(d, "reg.json", |_| {});
    assert_eq!(exit_code(d, "--config reg.json simulate segmentation --count 2"), 2);
}

#[test]
fn rf_leaf_pipeline_controls_miscoverage() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    regression_files(d);
    ok(
        d,
        "rf-embed --residual res.csv --embed cal.csv cal.emb --embed test.csv test.emb",
    );
    ok(
        d,
        "calibrate --calibration cal.csv --test test.csv --calibration-embedding cal.emb \
         --test-embedding test.emb --out t.csv",
    );
    ok(d, "evaluate --test test.csv --thresholds t.csv --out-json e.json");
    let report = json(d, "e.json");
    let miscoverage = report["regression"]["miscoverage"].as_f64().unwrap();
    // 300 test points at alpha = 0.1: four standard errors above the level.
    assert!(miscoverage <= 0.1 + 4.0 * (0.09f64 / 300.0).sqrt(), "{miscoverage}");
    assert_eq!(report["seed"], 20_240_101);
}

#[test]
fn segmentation_pipeline_with_embeddings() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for (seed, name) in [(1, "cal"), (2, "test")] {
        ok(
            d,
            &format!(
                "simulate segmentation --count 120 --rows 16 --cols 16 --seed {seed} --out {name}.seg \
                 --embedding {name}.emb"
            ),
        );
    }
    ok(
        d,
        "calibrate --task segmentation --calibration cal.seg --test test.seg --calibration-embedding cal.emb \
         --test-embedding test.emb --out t.csv",
    );
    ok(
        d,
        "evaluate --task segmentation --test test.seg --thresholds t.csv --out-json e.json --bins-csv bins.csv",
    );
    let recall = json(d, "e.json")["segmentation"]["recall_mean"].as_f64().unwrap();
    assert!(recall > 0.8, "{recall}");
    assert_eq!(read(d, "bins.csv").lines().count(), 11);
}

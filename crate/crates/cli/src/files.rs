//! File formats owned by the command-line front end.
//!
//! * Record CSV: a header row naming the columns. `id` (optional, unsigned
//!   integer), feature columns `x` or `x0`, `x1`, …, and the optional targets
//!   `y`, `f_hat` and `abs_residual`. Other names are rejected.
//! * Threshold CSV: `id,threshold` for AA-CRC or `id,crc_threshold` for the
//!   marginal baseline. Infinite thresholds are written as `inf` / `-inf`.
//! * Certificate CSV: `id,outcome,converged,stationarity_residual,tolerance,objective,iterations`.
//! * Random-forest model: JSON `{"format": "aacrc-rf-model", "version": 1, "seed", "forest"}`.
//! * Every output file `F` gets a sidecar `F.meta.json` recording the format,
//!   its version, the command and the seed.
//!
//! Embedding files and segmentation containers live in `aacrc_core::io`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aacrc_core::io::{read_embedding, read_segmentation, read_segmentation_csv, Embedding};
use aacrc_core::sim::RegressionData;
use aacrc_core::{FitResult, Matrix, RandomForest, SegmentationSample};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const RF_MODEL_FORMAT: &str = "aacrc-rf-model";
pub const REGRESSION_HEADER: [&str; 4] = ["id", "x", "y", "f_hat"];
pub const CERTIFICATE_HEADER: [&str; 7] = [
    "id",
    "outcome",
    "converged",
    "stationarity_residual",
    "tolerance",
    "objective",
    "iterations",
];

#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub format: &'a str,
    pub version: u32,
    pub command: &'a str,
    pub seed: u64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_meta(path: &Path, meta: &Meta<'_>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(meta_path(path), text + "\n").map_err(|e| write_error(path, e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| write_error(path, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| write_error(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

fn in_file(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |msg| CliError::Data(format!("{}: {msg}", path.display()))
}

// ---------- records ----------

/// Rows of a record CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Records {
    pub ids: Vec<u64>,
    pub features: Matrix,
    pub y: Option<Vec<f64>>,
    pub f_hat: Option<Vec<f64>>,
    pub abs_residual: Option<Vec<f64>>,
}

impl Records {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// `|y − f̂|`, from the `abs_residual` column or computed from `y` and `f_hat`.
    pub fn residuals(&self) -> Option<Vec<f64>> {
        if let Some(r) = &self.abs_residual {
            return Some(r.clone());
        }
        let (y, f) = (self.y.as_ref()?, self.f_hat.as_ref()?);
        Some(y.iter().zip(f).map(|(y, f)| (y - f).abs()).collect())
    }
}

enum Column {
    Id,
    Feature,
    Y,
    FHat,
    AbsResidual,
}

fn classify(name: &str) -> Option<Column> {
    match name {
        "id" => Some(Column::Id),
        "y" => Some(Column::Y),
        "f_hat" => Some(Column::FHat),
        "abs_residual" => Some(Column::AbsResidual),
        "x" => Some(Column::Feature),
        _ => name
            .strip_prefix('x')
            .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .map(|_| Column::Feature),
    }
}

pub fn read_records(path: &Path) -> CliResult<Records> {
    let err = in_file(path);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = reader.headers()?.clone();
    let mut kinds = Vec::with_capacity(header.len());
    for name in header.iter() {
        let kind = classify(name).ok_or_else(|| err(format!("unknown column `{name}`")))?;
        kinds.push(kind);
    }
    let n_features = kinds.iter().filter(|k| matches!(k, Column::Feature)).count();
    let has = |want: fn(&Column) -> bool| kinds.iter().any(want);
    let has_id = has(|k| matches!(k, Column::Id));
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut y = has(|k| matches!(k, Column::Y)).then(Vec::new);
    let mut f_hat = has(|k| matches!(k, Column::FHat)).then(Vec::new);
    let mut abs_residual = has(|k| matches!(k, Column::AbsResidual)).then(Vec::new);
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |s: &str| -> CliResult<f64> {
            s.parse::<f64>()
                .map_err(|_| err(format!("line {}: bad number `{s}`", line + 2)))
        };
        if !has_id {
            ids.push(line as u64);
        }
        for (kind, field) in kinds.iter().zip(record.iter()) {
            match kind {
                Column::Id => ids.push(
                    field
                        .parse()
                        .map_err(|_| err(format!("line {}: bad id `{field}`", line + 2)))?,
                ),
                Column::Feature => data.push(parse(field)?),
                Column::Y => y.as_mut().expect("column present").push(parse(field)?),
                Column::FHat => f_hat.as_mut().expect("column present").push(parse(field)?),
                Column::AbsResidual => abs_residual.as_mut().expect("column present").push(parse(field)?),
            }
        }
    }
    let n = ids.len();
    Ok(Records {
        ids,
        features: Matrix::from_vec(n, n_features, data)?,
        y,
        f_hat,
        abs_residual,
    })
}

pub fn write_regression(path: &Path, data: &RegressionData) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(REGRESSION_HEADER)?;
    for i in 0..data.len() {
        w.write_record([
            i.to_string(),
            data.x[i].to_string(),
            data.y[i].to_string(),
            data.f_hat[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rejects repeated ids.
pub fn ensure_unique(ids: &[u64], what: &str) -> CliResult<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(CliError::Data(format!("duplicate {what} id {dup}")));
    }
    Ok(())
}

// ---------- embeddings ----------

pub fn read_embedding_file(path: &Path) -> CliResult<Embedding> {
    read_embedding(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Embedding rows reordered to follow `ids`. Files without ids must list the
/// records in the same order.
pub fn align_embedding(embedding: &Embedding, ids: &[u64], path: &Path) -> CliResult<Matrix> {
    let err = in_file(path);
    match &embedding.ids {
        None => {
            if embedding.rows.nrows() != ids.len() {
                return Err(err(format!(
                    "{} embedding rows for {} records and no ids to align them",
                    embedding.rows.nrows(),
                    ids.len()
                )));
            }
            Ok(embedding.rows.clone())
        }
        Some(emb_ids) => {
            ensure_unique(emb_ids, "embedding")?;
            let position: std::collections::HashMap<u64, usize> =
                emb_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
            let rows = ids
                .iter()
                .map(|id| {
                    position
                        .get(id)
                        .copied()
                        .ok_or_else(|| err(format!("no embedding for record id {id}")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(embedding.rows.select_rows(&rows))
        }
    }
}

// ---------- segmentation ----------

/// Reads a segmentation CSV (by extension) or binary container. Container
/// records are numbered from zero.
pub fn read_segmentation_file(path: &Path) -> CliResult<(Vec<u64>, Vec<SegmentationSample>)> {
    let wrap = |e: aacrc_core::Error| CliError::Data(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_segmentation_csv(open(path)?).map_err(wrap)
    } else {
        let samples = read_segmentation(open(path)?).map_err(wrap)?;
        Ok(((0..samples.len() as u64).collect(), samples))
    }
}

// ---------- thresholds and certificates ----------

pub fn write_thresholds(path: &Path, column: &str, ids: &[u64], values: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["id", column])?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub baseline: bool,
    pub ids: Vec<u64>,
    pub values: Vec<f64>,
}

pub fn read_thresholds(path: &Path) -> CliResult<Thresholds> {
    let err = in_file(path);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let baseline = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["id", "threshold"] => false,
        ["id", "crc_threshold"] => true,
        _ => {
            return Err(err(format!(
                "expected header `id,threshold` or `id,crc_threshold`, found `{}`",
                header.join(",")
            )))
        }
    };
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        ids.push(
            record[0]
                .parse()
                .map_err(|_| err(format!("line {}: bad id `{}`", line + 2, &record[0])))?,
        );
        values.push(
            record[1]
                .parse()
                .map_err(|_| err(format!("line {}: bad threshold `{}`", line + 2, &record[1])))?,
        );
    }
    ensure_unique(&ids, "threshold")?;
    Ok(Thresholds { baseline, ids, values })
}

impl Thresholds {
    /// Values reordered to follow `ids`.
    pub fn aligned(&self, ids: &[u64], path: &Path) -> CliResult<Vec<f64>> {
        let position: std::collections::HashMap<u64, f64> =
            self.ids.iter().copied().zip(self.values.iter().copied()).collect();
        ids.iter()
            .map(|id| {
                position
                    .get(id)
                    .copied()
                    .ok_or_else(|| CliError::Data(format!("{}: no threshold for id {id}", path.display())))
            })
            .collect()
    }
}

pub fn write_certificates(path: &Path, ids: &[u64], fits: &[FitResult]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(CERTIFICATE_HEADER)?;
    for (id, f) in ids.iter().zip(fits) {
        let outcome = serde_json::to_value(f.outcome)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        w.write_record([
            id.to_string(),
            outcome,
            f.converged.to_string(),
            f.stationarity_residual.to_string(),
            f.tolerance.to_string(),
            f.objective.to_string(),
            f.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------- forest model ----------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub forest: RandomForest,
}

pub fn write_model(path: &Path, forest: &RandomForest, seed: u64) -> CliResult<()> {
    let file = ModelFile {
        format: RF_MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        seed,
        forest: forest.clone(),
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> CliResult<RandomForest> {
    let err = in_file(path);
    let file: ModelFile = serde_json::from_reader(open(path)?).map_err(|e| err(e.to_string()))?;
    if file.format != RF_MODEL_FORMAT {
        return Err(err(format!("not a forest model (format `{}`)", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(err(format!("unsupported model version {}", file.version)));
    }
    file.forest.validate().map_err(|e| err(e.to_string()))?;
    Ok(file.forest)
}

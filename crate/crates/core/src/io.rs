//! On-disk formats.
//!
//! * Embedding files: a header line `d=<int>` followed by one record per
//!   line, `d` comma-separated reals with an optional leading integer id.
//! * Segmentation containers: little-endian binary, the magic `AACRCSEG`,
//!   a `u32` version, `u32` rows and cols, a `u64` record count, then per
//!   image `rows·cols` row-major `f32` scores followed by as many `u8` mask
//!   bytes.
//! * Segmentation CSV, for small cases: header `id,rows,cols,scores,mask`,
//!   scores space-separated and the mask a string of `0`/`1` characters.
//!
//! Readers reject unknown versions and malformed headers.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tasks::SegmentationSample;

pub const SEGMENTATION_MAGIC: &[u8; 8] = b"AACRCSEG";
pub const SEGMENTATION_VERSION: u32 = 1;
pub const SEGMENTATION_CSV_HEADER: &str = "id,rows,cols,scores,mask";

/// Records with optional ids, as read from an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub ids: Option<Vec<u64>>,
    pub rows: Matrix,
}

pub fn write_embedding<W: Write>(mut w: W, ids: Option<&[u64]>, rows: &Matrix) -> Result<()> {
    if let Some(ids) = ids {
        if ids.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                found: ids.len(),
            });
        }
    }
    writeln!(w, "d={}", rows.ncols())?;
    let mut line = String::new();
    for (i, row) in rows.rows().enumerate() {
        line.clear();
        if let Some(ids) = ids {
            line.push_str(&ids[i].to_string());
            line.push(',');
        }
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            // `{}` on f64 is the shortest representation that round-trips.
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embedding<R: BufRead>(r: R) -> Result<Embedding> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty embedding file".into()))??;
    let d: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected header `d=<int>`, found `{header}`")))?;
    let mut ids: Vec<u64> = Vec::new();
    let mut data = Vec::new();
    let mut with_ids = None;
    let mut count = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let has_id = match fields.len() {
            n if n == d => false,
            n if n == d + 1 => true,
            n => {
                return Err(Error::Format(format!(
                    "line {}: expected {d} or {} fields, found {n}",
                    k + 2,
                    d + 1
                )))
            }
        };
        if *with_ids.get_or_insert(has_id) != has_id {
            return Err(Error::Format(format!(
                "line {}: ids must be given on every record or none",
                k + 2
            )));
        }
        let values = if has_id {
            let id = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad record id `{}`", k + 2, fields[0])))?;
            ids.push(id);
            &fields[1..]
        } else {
            &fields[..]
        };
        for v in values {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad value `{v}`", k + 2)))?;
            data.push(x);
        }
        count += 1;
    }
    Ok(Embedding {
        ids: with_ids.unwrap_or(false).then_some(ids),
        rows: Matrix::from_vec(count, d, data)?,
    })
}

pub fn write_segmentation<W: Write>(mut w: W, samples: &[SegmentationSample]) -> Result<()> {
    let (rows, cols) = common_shape(samples)?;
    w.write_all(SEGMENTATION_MAGIC)?;
    w.write_all(&SEGMENTATION_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(rows)?.to_le_bytes())?;
    w.write_all(&to_u32(cols)?.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 5);
    for s in samples {
        buf.clear();
        for &v in s.scores() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend(s.mask().iter().map(|&m| m as u8));
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segmentation<R: Read>(mut r: R) -> Result<Vec<SegmentationSample>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated segmentation header".into()))?;
    if &magic != SEGMENTATION_MAGIC {
        return Err(Error::Format("not a segmentation container (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != SEGMENTATION_VERSION {
        return Err(Error::Format(format!(
            "unsupported segmentation container version {version}"
        )));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)
        .map_err(|_| Error::Format("truncated segmentation header".into()))?;
    let count = u64::from_le_bytes(count) as usize;
    let size = rows * cols;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    let mut buf = vec![0u8; size * 5];
    for k in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated record {k} of {count}")))?;
        let scores = buf[..4 * size]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mask = buf[4 * size..]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("record {k}: mask byte {other} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        samples.push(SegmentationSample::new(rows, cols, scores, mask)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    Ok(samples)
}

pub fn write_segmentation_csv<W: Write>(mut w: W, ids: &[u64], samples: &[SegmentationSample]) -> Result<()> {
    if ids.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            found: ids.len(),
        });
    }
    writeln!(w, "{SEGMENTATION_CSV_HEADER}")?;
    for (id, s) in ids.iter().zip(samples) {
        let scores: Vec<String> = s.scores().iter().map(|v| v.to_string()).collect();
        let mask: String = s.mask().iter().map(|&m| if m { '1' } else { '0' }).collect();
        writeln!(w, "{id},{},{},{},{mask}", s.rows(), s.cols(), scores.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segmentation_csv<R: BufRead>(r: R) -> Result<(Vec<u64>, Vec<SegmentationSample>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty segmentation CSV".into()))??;
    if header.trim() != SEGMENTATION_CSV_HEADER {
        return Err(Error::Format(format!(
            "expected header `{SEGMENTATION_CSV_HEADER}`, found `{header}`"
        )));
    }
    let mut ids = Vec::new();
    let mut samples = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: {what}", k + 2));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let id: u64 = fields[0].parse().map_err(|_| bad("bad id"))?;
        let rows: usize = fields[1].parse().map_err(|_| bad("bad rows"))?;
        let cols: usize = fields[2].parse().map_err(|_| bad("bad cols"))?;
        let scores = fields[3]
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad score")))
            .collect::<Result<Vec<_>>>()?;
        let mask = fields[4]
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad("mask must be a string of 0 and 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        samples.push(SegmentationSample::new(rows, cols, scores, mask)?);
    }
    Ok((ids, samples))
}

fn common_shape(samples: &[SegmentationSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyData("no segmentation samples to write".into()))?;
    let shape = (first.rows(), first.cols());
    if let Some(s) = samples.iter().find(|s| (s.rows(), s.cols()) != shape) {
        return Err(Error::DimensionMismatch {
            expected: shape.0 * shape.1,
            found: s.rows() * s.cols(),
        });
    }
    Ok(shape)
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit the container header")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated segmentation header".into()))?;
    Ok(u32::from_le_bytes(b))
}

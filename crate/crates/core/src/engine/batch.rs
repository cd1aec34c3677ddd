//! Solving one calibration problem for many test points.
//!
//! Identical feature rows share a single solve. Unique rows are ordered
//! lexicographically and split into fixed-size chunks; each chunk starts from
//! a clone of the solver state left by a cold solve of the first row and then
//! warm-starts along the chunk. Chunking does not depend on the thread count,
//! so results are identical however many threads rayon uses.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CalibrationSet, Calibrator, FitResult, Regularizer, SolverConfig, SolverState};
use crate::error::{Error, Result};
use crate::loss::AlphaLevel;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchOptions {
    pub warm_start: bool,
    pub chunk_size: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            warm_start: true,
            chunk_size: 64,
        }
    }
}

/// Fits every row of `test_features`; per-row failures are reported in place.
pub fn calibrate_batch(
    calib: &CalibrationSet,
    test_features: &Matrix,
    alpha: AlphaLevel,
    reg: &Regularizer,
    cfg: &SolverConfig,
    opts: &BatchOptions,
) -> Result<Vec<Result<FitResult>>> {
    if opts.chunk_size == 0 {
        return Err(Error::InvalidConfig("chunk_size must be >= 1".into()));
    }
    if test_features.ncols() != calib.dim() {
        return Err(Error::DimensionMismatch {
            expected: calib.dim(),
            found: test_features.ncols(),
        });
    }
    let calibrator = Calibrator::new(calib, alpha, *reg, cfg.clone())?;
    Ok(calibrator.fit_rows(test_features, opts))
}

impl Calibrator<'_> {
    /// Batch counterpart of [`Calibrator::fit`].
    pub fn fit_rows(&self, rows: &Matrix, opts: &BatchOptions) -> Vec<Result<FitResult>> {
        let mut slot_of_row = Vec::with_capacity(rows.nrows());
        let mut unique: Vec<usize> = Vec::new();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for (i, row) in rows.rows().enumerate() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let slot = *seen.entry(key).or_insert_with(|| {
                unique.push(i);
                unique.len() - 1
            });
            slot_of_row.push(slot);
        }

        let solved: Vec<Result<FitResult>> = if opts.warm_start {
            let mut order: Vec<usize> = (0..unique.len()).collect();
            order.sort_by(|&x, &y| lexicographic(rows.row(unique[x]), rows.row(unique[y])));
            let mut reference = SolverState::Empty;
            if let Some(&first) = order.first() {
                // A failed reference solve just leaves the chunks to start cold.
                if self.fit_with_state(rows.row(unique[first]), &mut reference).is_err() {
                    reference = SolverState::Empty;
                }
            }
            let chunks: Vec<Vec<(usize, Result<FitResult>)>> = order
                .par_chunks(opts.chunk_size.max(1))
                .map(|chunk| {
                    let mut state = reference.clone();
                    chunk
                        .iter()
                        .map(|&slot| (slot, self.fit_with_state(rows.row(unique[slot]), &mut state)))
                        .collect()
                })
                .collect();
            let mut out: Vec<Option<Result<FitResult>>> = (0..unique.len()).map(|_| None).collect();
            for (slot, res) in chunks.into_iter().flatten() {
                out[slot] = Some(res);
            }
            out.into_iter().map(|r| r.expect("every slot solved")).collect()
        } else {
            unique.par_iter().map(|&i| self.fit(rows.row(i))).collect()
        };

        slot_of_row.into_iter().map(|slot| solved[slot].clone()).collect()
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

//! `aacrc simulate`: synthetic regression records or segmentation images.

use aacrc_core::io::{write_embedding, write_segmentation, write_segmentation_csv};
use aacrc_core::sim::{synth_regression_generate, synth_segmentation_with};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{create, write_meta, write_regression, Meta, FORMAT_VERSION};
use crate::{SegFormat, SimulateArgs, Task};

pub fn run(args: &SimulateArgs, mut config: RunConfig) -> CliResult<()> {
    if let Some(seed) = args.seed {
        config.experiment.split.seed = seed;
    }
    let seed = config.seed();
    match args.task {
        Task::Regression => {
            let n = args
                .n
                .ok_or_else(|| CliError::Config("--n is required for regression data".into()))?;
            if n == 0 {
                return Err(CliError::Config("--n must be >= 1".into()));
            }
            let data = synth_regression_generate(n, seed)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| config.paths.data_dir.join("regression.csv"));
            write_regression(&out, &data)?;
            write_meta(
                &out,
                &Meta {
                    format: "aacrc-regression-csv",
                    version: FORMAT_VERSION,
                    command: "simulate regression",
                    seed,
                    details: json!({ "n": n }),
                },
            )?;
            println!("wrote {n} regression records to {} (seed {seed})", out.display());
        }
        Task::Segmentation => {
            let split = &config.experiment.split;
            let count = args.count.unwrap_or(split.residual + split.calibration + split.test);
            if count == 0 {
                return Err(CliError::Config("--count must be >= 1".into()));
            }
            let mut params = config.experiment.segmentation.clone();
            params.rows = args.rows.unwrap_or(params.rows);
            params.cols = args.cols.unwrap_or(params.cols);
            params.embedding_dim = args.embedding_dim.unwrap_or(params.embedding_dim);
            let data = synth_segmentation_with(count, &params, seed)?;
            let ids: Vec<u64> = (0..count as u64).collect();
            let (default_name, format) = match args.format {
                SegFormat::Bin => ("segmentation.seg", "aacrc-segmentation-container"),
                SegFormat::Csv => ("segmentation.csv", "aacrc-segmentation-csv"),
            };
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| config.paths.data_dir.join(default_name));
            let mut w = create(&out)?;
            match args.format {
                SegFormat::Bin => write_segmentation(&mut w, &data.samples)?,
                SegFormat::Csv => write_segmentation_csv(&mut w, &ids, &data.samples)?,
            }
            let details = json!({ "count": count, "rows": params.rows, "cols": params.cols });
            write_meta(
                &out,
                &Meta {
                    format,
                    version: FORMAT_VERSION,
                    command: "simulate segmentation",
                    seed,
                    details: details.clone(),
                },
            )?;
            if let Some(path) = &args.embedding {
                write_embedding(create(path)?, Some(&ids), &data.embedding)?;
                write_meta(
                    path,
                    &Meta {
                        format: "aacrc-embedding",
                        version: FORMAT_VERSION,
                        command: "simulate segmentation",
                        seed,
                        details,
                    },
                )?;
            }
            println!(
                "wrote {count} {}x{} images to {} (seed {seed})",
                params.rows,
                params.cols,
                out.display()
            );
        }
    }
    Ok(())
}

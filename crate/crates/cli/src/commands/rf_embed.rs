//! `aacrc rf-embed`: train a forest on absolute residuals, then write
//! leaf-indicator embeddings.

use aacrc_core::features::rf_fit;
use aacrc_core::io::write_embedding;
use aacrc_core::sim::FunctionClassSpec;
use aacrc_core::{Matrix, RandomForest, RfParams};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{create, ensure_unique, read_model, read_records, write_meta, write_model, Meta, FORMAT_VERSION};
use crate::RfEmbedArgs;

pub fn run(args: &RfEmbedArgs, config: RunConfig) -> CliResult<()> {
    if args.model.is_none() && args.embed.is_empty() {
        return Err(CliError::Config("nothing to do: pass --model and/or --embed".into()));
    }
    let forest = match &args.load_model {
        Some(path) => read_model(path)?,
        None => train(args, &config)?,
    };
    let seed = forest.params().seed;
    if let Some(path) = &args.model {
        write_model(path, &forest, seed)?;
        write_meta(
            path,
            &Meta {
                format: "aacrc-rf-model",
                version: FORMAT_VERSION,
                command: "rf-embed",
                seed,
                details: json!({ "trees": forest.n_trees(), "leaves": forest.leaf_count() }),
            },
        )?;
    }
    for pair in args.embed.chunks(2) {
        let (input, output) = (&pair[0], &pair[1]);
        let records = read_records(input)?;
        ensure_unique(&records.ids, "record")?;
        if records.features.ncols() != forest.n_features() {
            return Err(CliError::Data(format!(
                "{}: {} feature columns, the forest expects {}",
                input.display(),
                records.features.ncols(),
                forest.n_features()
            )));
        }
        let mut embedded = Matrix::zeros(records.len(), forest.leaf_count());
        for (i, row) in records.features.rows().enumerate() {
            embedded.row_mut(i).copy_from_slice(&forest.leaf_embed(row));
        }
        write_embedding(create(output)?, Some(&records.ids), &embedded)?;
        write_meta(
            output,
            &Meta {
                format: "aacrc-embedding",
                version: FORMAT_VERSION,
                command: "rf-embed",
                seed,
                details: json!({ "records": records.len(), "source": input.display().to_string() }),
            },
        )?;
        println!(
            "embedded {} records from {} into {}",
            records.len(),
            input.display(),
            output.display()
        );
    }
    Ok(())
}

fn train(args: &RfEmbedArgs, config: &RunConfig) -> CliResult<RandomForest> {
    let path = args
        .residual
        .as_ref()
        .expect("clap requires --residual without --load-model");
    let records = read_records(path)?;
    let targets = records.residuals().ok_or_else(|| {
        CliError::Data(format!(
            "{}: need an `abs_residual` column or both `y` and `f_hat`",
            path.display()
        ))
    })?;
    if records.features.ncols() == 0 {
        return Err(CliError::Data(format!("{}: no feature columns", path.display())));
    }
    let mut params = match &config.experiment.function_class {
        FunctionClassSpec::RfLeaf { params } => params.clone(),
        _ => RfParams::default(),
    };
    params.n_trees = args.trees.unwrap_or(params.n_trees);
    params.max_depth = args.max_depth.unwrap_or(params.max_depth);
    params.min_samples_leaf = args.min_samples_leaf.unwrap_or(params.min_samples_leaf);
    if args.feature_fraction.is_some() {
        params.feature_fraction = args.feature_fraction;
    }
    if args.no_bootstrap {
        params.bootstrap = false;
    }
    params.seed = args.seed.unwrap_or(config.seed());
    let forest = rf_fit(&records.features, &targets, &params)?;
    println!(
        "trained {} trees with {} leaves on {} residuals (seed {})",
        forest.n_trees(),
        forest.leaf_count(),
        records.len(),
        params.seed
    );
    Ok(forest)
}

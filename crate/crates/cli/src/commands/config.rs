//! `aacrc config`.

use std::path::Path;

use aacrc_core::sim::TaskKind;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn dump_defaults(task: TaskKind) -> CliResult<()> {
    print_config(&RunConfig::for_task(task))
}

pub fn validate(path: &Path) -> CliResult<()> {
    print_config(&RunConfig::load(path)?)
}

fn print_config(config: &RunConfig) -> CliResult<()> {
    let text = serde_json::to_string_pretty(config).map_err(|e| CliError::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

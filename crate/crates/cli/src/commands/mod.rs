//! One module per subcommand.

pub mod calibrate;
pub mod config;
pub mod evaluate;
pub mod rf_embed;
pub mod simulate;

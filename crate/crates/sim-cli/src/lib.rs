//! Library surface of the `fedmix` CLI: config parsing, command
//! implementations and the exit-status mapping, kept separate from the
//! binary so integration tests can drive them directly.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_pretrain, cmd_simulate, cmd_table1, simulate, SimulationOutput,
    CSV_HEADER,
};
pub use config::SimConfig;
pub use error::{CliError, Result};

//! Library surface of the command-line front end, so integration tests can
//! drive the commands in-process.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod draw;
pub mod train;

pub use commands::{cmd_eval, cmd_gen_data, cmd_render, cmd_spot, cmd_train};
pub use config::{RunConfig, TrainConfig};

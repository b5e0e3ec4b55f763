//! Command implementations behind the `flowcast` binary. Each `cmd_*`
//! function takes a resolved [`RunConfig`], writes its artifacts under
//! `config.out` and returns an in-memory summary.

pub mod ablate;
pub mod config;
pub mod data;
pub mod diagnose;
pub mod error;
pub mod forecast;
pub mod generate;
pub mod gridsearch;
pub mod output;

pub use ablate::cmd_ablate;
pub use config::RunConfig;
pub use diagnose::cmd_diagnose;
pub use error::{CliError, Result};
pub use forecast::cmd_forecast;
pub use generate::cmd_generate;
pub use gridsearch::cmd_gridsearch;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "FLOWCAST_WORKERS";

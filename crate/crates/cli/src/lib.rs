//! Configuration, presets, run driver, probes and the oracle cross-check for the `muskat` binary.

pub mod config;
pub mod probe;
pub mod run;

pub use config::{parse_config, Axis, ConfigError, Eps, Preset, Shape, SimConfig};
pub use probe::{oracle_check, run_probe, OracleCheck, PROBES};
pub use run::{read_pgm, run, write_pgm, RunSummary, ENERGY_HEADER};

//! Congestion measurement, per-tick logging and deterministic replay.

mod log;
mod record;
mod replay;
mod summary;

pub use self::log::{read_log, write_log, LogError, LogHeader, RunLog, RunMeta, LOG_PROTOCOL_VERSION, SOFTWARE_VERSION};
pub use record::{mean_speed, CommandSource, TickRecord, VehicleRecord};
pub use replay::{replay, Divergence, ReplayError};
pub use summary::{summarize, write_summaries_csv, RunSummary, SUMMARY_CSV_COLUMNS};

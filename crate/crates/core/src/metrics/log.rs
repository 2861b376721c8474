//! JSONL run logs. The first line is a header describing how to rebuild
//! the run; every further line is one tick.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TickRecord;
use crate::advisory::{AdviceSettings, PolicyKind};
use crate::driver::DriverParams;
use crate::ring::{IdmParams, InitialCondition, RingConfig};

pub const LOG_PROTOCOL_VERSION: u32 = 1;
pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line 1: log header missing")]
    HeaderMissing,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: truncated record")]
    Truncated { line: usize },
    #[error("line 1: log protocol version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("line {line}: unexpected second header")]
    DuplicateHeader { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Free-form description of what produced a run; not needed for replay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunMeta {
    pub label: String,
    pub policy: Option<PolicyKind>,
    pub driver: Option<DriverParams>,
    pub advice: Option<AdviceSettings>,
    pub advice_start_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub software_version: String,
    pub protocol_version: u32,
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub initial: InitialCondition,
    #[serde(default)]
    pub meta: RunMeta,
}

impl LogHeader {
    pub fn new(ring: RingConfig, idm: IdmParams, initial: InitialCondition, meta: RunMeta) -> Self {
        Self {
            software_version: SOFTWARE_VERSION.to_string(),
            protocol_version: LOG_PROTOCOL_VERSION,
            ring,
            idm,
            initial,
            meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(Box<LogHeader>),
    Tick(TickRecord),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a LogHeader),
    Tick(&'a TickRecord),
}

pub fn write_log<'a, W: Write>(
    mut out: W,
    header: &LogHeader,
    records: impl IntoIterator<Item = &'a TickRecord>,
) -> Result<(), LogError> {
    serde_json::to_writer(&mut out, &LineRef::Header(header))?;
    out.write_all(b"\n")?;
    for record in records {
        write_record(&mut out, record)?;
    }
    out.flush()?;
    Ok(())
}

/// Append a single tick line, for writers that stream.
pub(crate) fn write_record<W: Write>(mut out: W, record: &TickRecord) -> Result<(), LogError> {
    serde_json::to_writer(&mut out, &LineRef::Tick(record))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_log<R: BufRead>(mut input: R) -> Result<RunLog, LogError> {
    let mut header = None;
    let mut records = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if input.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end();
        if text.is_empty() {
            continue;
        }
        let parsed: Line = match serde_json::from_str(text) {
            Ok(line) => line,
            Err(_) if !complete => return Err(LogError::Truncated { line: line_no }),
            Err(_) if line_no == 1 && !text.contains("\"header\"") => return Err(LogError::HeaderMissing),
            Err(e) => return Err(LogError::Malformed { line: line_no, message: e.to_string() }),
        };
        if !complete {
            return Err(LogError::Truncated { line: line_no });
        }
        match parsed {
            Line::Header(h) if header.is_none() => {
                if h.protocol_version != LOG_PROTOCOL_VERSION {
                    return Err(LogError::VersionMismatch { found: h.protocol_version, expected: LOG_PROTOCOL_VERSION });
                }
                header = Some(*h);
            }
            Line::Header(_) => return Err(LogError::DuplicateHeader { line: line_no }),
            Line::Tick(_) if header.is_none() => return Err(LogError::HeaderMissing),
            Line::Tick(r) => records.push(r),
        }
    }
    let header = header.ok_or(LogError::HeaderMissing)?;
    Ok(RunLog { header, records })
}
